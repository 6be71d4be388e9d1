//! The 21 action units used as class labels.

use super::DatasetError;

pub const N_CLASSES: usize = 21;

/// `(AU number, description)` in class-index order.
pub const AU_TABLE: [(u32, &str); N_CLASSES] = [
    (2, "Outer Brow Raiser"),
    (4, "Brow Lowerer"),
    (5, "Upper Lid Raiser"),
    (6, "Cheek Raiser"),
    (9, "Nose Wrinkler"),
    (12, "Lip Corner Puller"),
    (15, "Lip Corner Depressor"),
    (17, "Chin Raiser"),
    (23, "Lip Tightener"),
    (26, "Jaw Drop"),
    (41, "Lid Droop"),
    (43, "Eyes Closed"),
    (45, "Blink"),
    (51, "Head Turn Left"),
    (52, "Head Turn Right"),
    (53, "Head Up"),
    (54, "Head Down"),
    (61, "Eyes Turn Left"),
    (62, "Eyes Turn Right"),
    (63, "Eyes Up"),
    (64, "Eyes Down"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AuLabel {
    class_index: usize,
}

impl AuLabel {
    pub fn from_au(au: u32) -> Result<Self, DatasetError> {
        AU_TABLE
            .iter()
            .position(|&(n, _)| n == au)
            .map(|class_index| Self { class_index })
            .ok_or(DatasetError::UnknownAu(au))
    }

    pub fn from_class_index(class_index: usize) -> Option<Self> {
        (class_index < N_CLASSES).then_some(Self { class_index })
    }

    pub fn all() -> impl Iterator<Item = AuLabel> {
        (0..N_CLASSES).map(|class_index| Self { class_index })
    }

    pub fn class_index(self) -> usize {
        self.class_index
    }

    pub fn au_number(self) -> u32 {
        AU_TABLE[self.class_index].0
    }

    pub fn description(self) -> &'static str {
        AU_TABLE[self.class_index].1
    }
}

pub fn encode_target(label: AuLabel) -> [f64; N_CLASSES] {
    let mut t = [0.0; N_CLASSES];
    t[label.class_index] = 1.0;
    t
}

/// Inverse of [`encode_target`]; `None` unless the vector is exactly one-hot.
pub fn decode_target(target: &[f64]) -> Option<AuLabel> {
    if target.len() != N_CLASSES {
        return None;
    }
    let mut hot = None;
    for (i, &v) in target.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot.and_then(AuLabel::from_class_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_a_bijection() {
        let mut aus: Vec<u32> = AU_TABLE.iter().map(|e| e.0).collect();
        aus.sort_unstable();
        aus.dedup();
        assert_eq!(aus.len(), N_CLASSES);
        for l in AuLabel::all() {
            assert_eq!(AuLabel::from_au(l.au_number()).unwrap(), l);
        }
    }

    #[test]
    fn lookups() {
        assert_eq!(AuLabel::from_au(45).unwrap().description(), "Blink");
        assert_eq!(AuLabel::from_au(2).unwrap().class_index(), 0);
        assert_eq!(AuLabel::from_au(99), Err(DatasetError::UnknownAu(99)));
    }

    #[test]
    fn one_hot_roundtrip() {
        let first = encode_target(AuLabel::from_class_index(0).unwrap());
        assert_eq!(first[0], 1.0);
        assert!(first[1..].iter().all(|&v| v == 0.0));
        for l in AuLabel::all() {
            let t = encode_target(l);
            assert_eq!(t.iter().sum::<f64>(), 1.0);
            assert_eq!(decode_target(&t), Some(l));
        }
        assert_eq!(decode_target(&[0.0; N_CLASSES]), None);
    }
}
