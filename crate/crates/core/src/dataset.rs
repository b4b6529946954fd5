//! An immutable, indexed snapshot of a store: what queries and analytics
//! run against.

use std::path::{Path, PathBuf};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::analytics::GrayImage;
use crate::doc::{FrameDoc, FrameRef, Trip};
use crate::index::{FrameId, GridIndex, QueryError, QueryExpr};
use crate::store::{Store, StoreError};

/// Frames matching an optional expression, optionally restricted to a set
/// of trips. An empty selection covers every frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<QueryExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_ids: Option<Vec<String>>,
}

impl Selection {
    pub fn expr(expr: QueryExpr) -> Self {
        Selection {
            expr: Some(expr),
            trip_ids: None,
        }
    }
}

#[derive(Debug)]
pub struct Dataset {
    store: Store,
    index: GridIndex,
}

impl Dataset {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Ok(Self::from_store(Store::open(dir)?))
    }

    pub fn from_store(store: Store) -> Self {
        let index = GridIndex::build(&store, store.config().grid_cell_deg);
        Dataset { store, index }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn index(&self) -> &GridIndex {
        &self.index
    }

    pub fn frame(&self, id: FrameId) -> &FrameDoc {
        self.index.frame(&self.store, id)
    }

    pub fn trip_of(&self, id: FrameId) -> &Trip {
        self.index.trip(&self.store, id)
    }

    pub fn frame_ref(&self, id: FrameId) -> FrameRef {
        self.frame(id).frame_ref()
    }

    pub fn frame_id(&self, trip_id: &str, frame_idx: u32) -> Option<FrameId> {
        self.index.frame_id(&self.store, trip_id, frame_idx)
    }

    pub fn query(&self, expr: &QueryExpr) -> Result<Vec<FrameId>, QueryError> {
        self.index.query(&self.store, expr)
    }

    /// Frame ids of a selection, ascending.
    pub fn select(&self, selection: &Selection) -> Result<Vec<FrameId>, QueryError> {
        let ids: Vec<FrameId> = match &selection.expr {
            Some(expr) => self.query(expr)?,
            None => (0..self.index.len() as FrameId).collect(),
        };
        let Some(trip_ids) = &selection.trip_ids else {
            return Ok(ids);
        };
        let mut allowed = FixedBitSet::with_capacity(self.index.len());
        for trip_id in trip_ids {
            let pos = self
                .store
                .trips()
                .binary_search_by(|t| t.trip_id.as_str().cmp(trip_id))
                .map_err(|_| QueryError::Validation(format!("unknown trip {trip_id:?}")))?;
            let range = self.index.trip_frames(pos);
            allowed.insert_range(range.start as usize..range.end as usize);
        }
        Ok(ids.into_iter().filter(|&id| allowed.contains(id as usize)).collect())
    }

    pub fn frames<'a>(&'a self, ids: &'a [FrameId]) -> impl Iterator<Item = &'a FrameDoc> + 'a {
        ids.iter().map(move |&id| self.frame(id))
    }

    pub fn frames_with_trips<'a>(
        &'a self,
        ids: &'a [FrameId],
    ) -> impl Iterator<Item = (&'a FrameDoc, &'a Trip)> + 'a {
        ids.iter().map(move |&id| (self.frame(id), self.trip_of(id)))
    }

    /// Absolute path of a frame's image, if the store is on disk.
    pub fn image_path(&self, frame: &FrameDoc) -> Option<PathBuf> {
        self.store.dir().map(|d| d.join(&frame.image))
    }

    /// Loads a frame image, or `None` when it is missing or unreadable.
    pub fn load_image(&self, frame: &FrameDoc) -> Option<GrayImage> {
        let path = self.image_path(frame)?;
        if !path.is_file() {
            return None;
        }
        match GrayImage::open(&path) {
            Ok(img) => Some(img),
            Err(e) => {
                log::warn!("skipping unreadable frame image: {e}");
                None
            }
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.store.dir()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::doc::test_util::trip_with;
    use crate::index::Predicate;
    use crate::types::{ActionId, Weather};

    fn dataset() -> Dataset {
        let mut store = Store::in_memory(Config::default());
        for (id, n) in [("a", 3), ("b", 2), ("c", 4)] {
            let mut t = trip_with(id, &vec![([1.0; 4], ActionId::GoStraight); n]);
            if id == "c" {
                t.conditions.weather = Weather::Snowy;
            }
            t.derive_metrics(7).unwrap();
            store.put_trip(t).unwrap();
        }
        Dataset::from_store(store)
    }

    #[test]
    fn empty_selection_is_everything() {
        let d = dataset();
        assert_eq!(d.select(&Selection::default()).unwrap(), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn trip_restriction_intersects_expr() {
        let d = dataset();
        let sel = Selection {
            expr: Some(QueryExpr::pred(Predicate::Weather { values: vec![Weather::Clear] })),
            trip_ids: Some(vec!["b".into(), "c".into()]),
        };
        assert_eq!(d.select(&sel).unwrap(), vec![3, 4]);
        let unknown = Selection {
            trip_ids: Some(vec!["zz".into()]),
            ..Selection::default()
        };
        assert!(d.select(&unknown).is_err());
    }

    #[test]
    fn ids_map_back_to_frames() {
        let d = dataset();
        assert_eq!(d.frame_ref(4), FrameRef { trip_id: "b".into(), frame_idx: 1 });
        assert_eq!(d.frame_id("c", 0), Some(5));
        assert_eq!(d.trip_of(5).trip_id, "c");
    }
}
