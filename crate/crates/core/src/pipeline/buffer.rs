use std::sync::{Arc, Mutex};

use crate::embedding::Ratio;
use crate::error::{Error, Result};
use crate::image::Image;

/// One complete write into a slot.
#[derive(Clone, Debug)]
pub struct Slot {
    pub image: Arc<Image>,
    pub version: u64,
    pub produced_at_ratio: Ratio,
}

/// Per-view last-write-wins store shared by the editing producer and the trainer.
///
/// Each slot holds an `Arc` that is swapped whole under a short lock, so a reader
/// always sees exactly one write.
pub struct EditBuffer {
    slots: Vec<Mutex<Option<Slot>>>,
}

impl EditBuffer {
    pub fn new(views: usize) -> Self {
        Self {
            slots: (0..views).map(|_| Mutex::new(None)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn slot(&self, view_id: usize) -> Result<&Mutex<Option<Slot>>> {
        self.slots
            .get(view_id)
            .ok_or_else(|| Error::Invalid(format!("view {view_id} outside buffer of {}", self.slots.len())))
    }

    /// Stores `image` for `view_id` and returns the new version (starting at 1).
    pub fn write(&self, view_id: usize, image: Image, ratio: Ratio) -> Result<u64> {
        let image = Arc::new(image);
        let mut guard = self.slot(view_id)?.lock().unwrap();
        let version = guard.as_ref().map_or(0, |s| s.version) + 1;
        *guard = Some(Slot {
            image,
            version,
            produced_at_ratio: ratio,
        });
        Ok(version)
    }

    /// The latest write, or `None` if the slot was never written.
    pub fn read(&self, view_id: usize) -> Result<Option<Slot>> {
        Ok(self.slot(view_id)?.lock().unwrap().clone())
    }

    /// Current version per slot (0 for never written).
    pub fn versions(&self) -> Vec<u64> {
        self.slots
            .iter()
            .map(|s| s.lock().unwrap().as_ref().map_or(0, |s| s.version))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_write_wins() {
        let buf = EditBuffer::new(2);
        assert!(buf.read(0).unwrap().is_none());
        buf.write(0, Image::new(8, 8, [0.1; 3]), Ratio::ZERO).unwrap();
        let v = buf.write(0, Image::new(8, 8, [0.2; 3]), Ratio::ONE).unwrap();
        let slot = buf.read(0).unwrap().unwrap();
        assert_eq!(v, 2);
        assert_eq!(slot.version, 2);
        assert_eq!(slot.image.pixel(3, 3), [0.2; 3]);
        assert_eq!(slot.produced_at_ratio, Ratio::ONE);
        assert_eq!(buf.versions(), vec![2, 0]);
    }

    #[test]
    fn out_of_range_view_is_an_error() {
        let buf = EditBuffer::new(1);
        assert!(buf.read(1).is_err());
        assert!(buf.write(3, Image::new(8, 8, [0.0; 3]), Ratio::ZERO).is_err());
    }
}
