use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A full ranking of a query's options: `order()[r]` is the option placed at rank `r`.
///
/// Internally zero-based. On the wire (JSON) it is the one-based permutation
/// `[σ(1), …, σ(n)]`, e.g. `[2, 1, 3]` puts the second option first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking(Vec<usize>);

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        if n == 0 {
            return Err(Error::InvalidRanking("empty ranking".into()));
        }
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n {
                return Err(Error::InvalidRanking(format!("option {} out of range 1..={n}", i + 1)));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidRanking(format!("option {} ranked twice", i + 1)));
            }
        }
        Ok(Self(order))
    }

    pub fn from_one_based(perm: &[usize]) -> Result<Self> {
        if perm.contains(&0) {
            return Err(Error::InvalidRanking("ranks are one-based".into()));
        }
        Self::new(perm.iter().map(|&i| i - 1).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&i| i + 1).collect()
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    /// Index of the most preferred option.
    pub fn top(&self) -> usize {
        self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Ranking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_one_based().iter().map(ToString::to_string).collect();
        write!(f, "({})", parts.join(", "))
    }
}

impl Serialize for Ranking {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ranking {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let perm = Vec::<usize>::deserialize(d)?;
        Ranking::from_one_based(&perm).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_bijection() {
        assert!(Ranking::from_one_based(&[2, 1, 3]).is_ok());
        assert!(Ranking::from_one_based(&[1, 1, 2]).is_err());
        assert!(Ranking::from_one_based(&[0, 1]).is_err());
        assert!(Ranking::from_one_based(&[1, 4, 2]).is_err());
        assert!(Ranking::new(vec![]).is_err());
    }

    #[test]
    fn wire_format_is_one_based() {
        let r = Ranking::new(vec![1, 0, 2]).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), "[2,1,3]");
        let back: Ranking = serde_json::from_str("[2,1,3]").unwrap();
        assert_eq!(back, r);
        assert_eq!(back.top(), 1);
        assert!(serde_json::from_str::<Ranking>("[1,1,2]").is_err());
        assert_eq!(r.to_string(), "(2, 1, 3)");
    }
}
