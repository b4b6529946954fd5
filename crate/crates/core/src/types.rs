//! Domain vocabulary shared by every module: driving actions, model
//! identifiers, score vectors and trip-level spatial conditions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("unknown {kind} value {value:?}")]
    UnknownValue { kind: &'static str, value: String },
    #[error("action code {0} outside 1..=4")]
    BadActionCode(u8),
    #[error("model id must be non-empty")]
    EmptyModelId,
}

/// Discrete driving action. Codes are 1-based and stable.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ActionId {
    GoStraight,
    SlowStop,
    TurnLeft,
    TurnRight,
}

impl ActionId {
    pub const ALL: [ActionId; 4] = [
        ActionId::GoStraight,
        ActionId::SlowStop,
        ActionId::TurnLeft,
        ActionId::TurnRight,
    ];

    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(code: u8) -> Result<Self, TypeError> {
        match code {
            1..=4 => Ok(Self::ALL[usize::from(code - 1)]),
            _ => Err(TypeError::BadActionCode(code)),
        }
    }

    /// Position in a score vector.
    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionId::GoStraight => "go_straight",
            ActionId::SlowStop => "slow_stop",
            ActionId::TurnLeft => "turn_left",
            ActionId::TurnRight => "turn_right",
        }
    }
}

/// Name of a driving model, e.g. `tcnn1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(name: impl Into<String>) -> Result<Self, TypeError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TypeError::EmptyModelId);
        }
        Ok(ModelId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = TypeError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        ModelId::new(value)
    }
}

impl From<ModelId> for String {
    fn from(value: ModelId) -> Self {
        value.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Raw per-action outputs of one model for one frame, indexed by
/// [`ActionId::slot`]. Values are unitless and need not sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub [f64; 4]);

impl ScoreVector {
    pub fn get(&self, action: ActionId) -> f64 {
        self.0[action.slot()]
    }
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Like [`FromStr`], but maps anything unrecognised to `Undefined`.
            pub fn parse_lenient(s: &str) -> Self {
                s.parse().unwrap_or($name::Undefined)
            }
        }

        impl FromStr for $name {
            type Err = TypeError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(TypeError::UnknownValue { kind: $kind, value: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(TimeOfDay, "time_of_day" {
    Day => "day",
    Night => "night",
    DawnDusk => "dawn_dusk",
    Undefined => "undefined",
});

string_enum!(Weather, "weather" {
    Clear => "clear",
    Overcast => "overcast",
    Rainy => "rainy",
    Snowy => "snowy",
    Cloudy => "cloudy",
    Foggy => "foggy",
    Undefined => "undefined",
});

string_enum!(
    /// Street scene of a trip, also used as the type of a street segment.
    StreetScene, "street_scene" {
    CityStreet => "city_street",
    Highway => "highway",
    Residential => "residential",
    Tunnel => "tunnel",
    Parking => "parking",
    GasStation => "gas_station",
    Undefined => "undefined",
});

impl FromStr for ActionId {
    type Err = TypeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| TypeError::UnknownValue {
                kind: "action",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trip-level context attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpatialConditions {
    pub time_of_day: TimeOfDay,
    pub weather: Weather,
    pub street_scene: StreetScene,
}

impl Default for SpatialConditions {
    fn default() -> Self {
        SpatialConditions {
            time_of_day: TimeOfDay::Undefined,
            weather: Weather::Undefined,
            street_scene: StreetScene::Undefined,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_codes_are_one_based_and_stable() {
        let codes: Vec<u8> = ActionId::ALL.iter().map(|a| a.code()).collect();
        assert_eq!(codes, vec![1, 2, 3, 4]);
        for a in ActionId::ALL {
            assert_eq!(ActionId::from_code(a.code()).unwrap(), a);
        }
        assert!(ActionId::from_code(0).is_err());
        assert!(ActionId::from_code(5).is_err());
    }

    #[test]
    fn enums_serialize_as_snake_case() {
        assert_eq!(
            serde_json::to_string(&ActionId::SlowStop).unwrap(),
            "\"slow_stop\""
        );
        assert_eq!(
            serde_json::to_string(&TimeOfDay::DawnDusk).unwrap(),
            "\"dawn_dusk\""
        );
        assert_eq!(
            serde_json::to_string(&StreetScene::GasStation).unwrap(),
            "\"gas_station\""
        );
        for w in Weather::ALL {
            let json = serde_json::to_string(w).unwrap();
            assert_eq!(json, format!("\"{}\"", w.as_str()));
        }
    }

    #[test]
    fn unknown_street_type_is_undefined_when_lenient() {
        assert_eq!(StreetScene::parse_lenient("motorway"), StreetScene::Undefined);
        assert!("motorway".parse::<StreetScene>().is_err());
    }

    #[test]
    fn model_id_rejects_empty() {
        assert!(ModelId::new("").is_err());
        assert!(serde_json::from_str::<ModelId>("\"\"").is_err());
        assert_eq!(ModelId::new("tcnn1").unwrap().as_str(), "tcnn1");
    }
}
