use super::cache::read_log;
use super::{Label, Oracle, OracleError};
use crate::transforms::{Image, Shape};
use std::collections::HashMap;
use std::path::Path;

/// Answers queries from a recorded JSON-lines log keyed by content hash.
#[derive(Debug, Clone, Default)]
pub struct PlaybackOracle {
    entries: HashMap<[u8; 32], Label>,
    shape: Option<Shape>,
    num_classes: Option<usize>,
}

impl PlaybackOracle {
    pub fn open(path: &Path) -> Result<Self, OracleError> {
        Ok(Self {
            entries: read_log(path)?,
            shape: None,
            num_classes: None,
        })
    }

    pub fn from_records(records: impl IntoIterator<Item = (Image, Label)>) -> Self {
        Self {
            entries: records.into_iter().map(|(img, l)| (img.content_hash(), l)).collect(),
            shape: None,
            num_classes: None,
        }
    }

    pub fn with_shape(mut self, shape: Shape) -> Self {
        self.shape = Some(shape);
        self
    }

    pub fn with_num_classes(mut self, k: usize) -> Self {
        self.num_classes = Some(k);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Oracle for PlaybackOracle {
    fn top1(&self, img: &Image) -> Result<Label, OracleError> {
        super::check_shape(self.shape, img)?;
        let key = img.content_hash();
        self.entries
            .get(&key)
            .copied()
            .ok_or_else(|| OracleError::MissingPrediction { hash: hex::encode(key) })
    }

    fn input_shape(&self) -> Option<Shape> {
        self.shape
    }

    fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_is_an_error() {
        let a = Image::filled(Shape::new(1, 1, 1), 0.2).unwrap();
        let b = Image::filled(Shape::new(1, 1, 1), 0.3).unwrap();
        let p = PlaybackOracle::from_records([(a.clone(), Label(4))]);
        assert_eq!(p.top1(&a).unwrap(), Label(4));
        match p.top1(&b) {
            Err(OracleError::MissingPrediction { hash }) => assert_eq!(hash, hex::encode(b.content_hash())),
            other => panic!("unexpected {other:?}"),
        }
    }
}
