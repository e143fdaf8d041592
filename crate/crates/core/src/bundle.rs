//! Bundles of goods encoded as bitmasks, and lotteries over them.
//!
//! Goods are numbered `1..=n` in keys and display (bit `i - 1` holds good
//! `i`). Keys are the sorted, comma-joined good numbers, so `{1,3}` has the
//! key `"1,3"` and the empty bundle has the key `""`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Largest number of goods a bundle universe may hold.
pub const MAX_GOODS: usize = 20;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bundle {
    mask: u32,
    n: u8,
}

impl Bundle {
    pub fn new(mask: u32, n: usize) -> Result<Self> {
        check_goods(n)?;
        if (mask as u64) >> n != 0 {
            return Err(Error::Argument(format!(
                "mask {mask:#b} has bits beyond {n} goods"
            )));
        }
        Ok(Bundle { mask, n: n as u8 })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Bundle::new(0, n)
    }

    /// The grand bundle containing every good.
    pub fn grand(n: usize) -> Result<Self> {
        check_goods(n)?;
        Bundle::new(((1u64 << n) - 1) as u32, n)
    }

    /// Bundle from 1-based good numbers.
    pub fn from_goods(goods: &[usize], n: usize) -> Result<Self> {
        check_goods(n)?;
        let mut mask = 0u32;
        for &g in goods {
            if g == 0 || g > n {
                return Err(Error::Argument(format!("good {g} not in 1..={n}")));
            }
            mask |= 1 << (g - 1);
        }
        Bundle::new(mask, n)
    }

    /// Parses a bundle key such as `"1,3"`. The empty string, `"{}"` and
    /// `"∅"` all denote the empty bundle.
    pub fn parse_key(key: &str, n: usize) -> Result<Self> {
        let trimmed = key.trim().trim_start_matches('{').trim_end_matches('}');
        if trimmed.is_empty() || trimmed == "∅" {
            return Bundle::empty(n);
        }
        let goods = trimmed
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Argument(format!("bad bundle key {key:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Bundle::from_goods(&goods, n)
    }

    /// Every bundle over `n` goods in increasing mask order, including the
    /// empty bundle.
    pub fn all(n: usize) -> Result<impl Iterator<Item = Bundle>> {
        check_goods(n)?;
        Ok((0..(1u64 << n)).map(move |m| Bundle {
            mask: m as u32,
            n: n as u8,
        }))
    }

    pub fn mask(self) -> u32 {
        self.mask
    }

    pub fn n(self) -> usize {
        self.n as usize
    }

    pub fn len(self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.mask == 0
    }

    pub fn is_grand(self) -> bool {
        self.mask as u64 == (1u64 << self.n) - 1
    }

    pub fn contains_good(self, good: usize) -> bool {
        good >= 1 && good <= self.n() && self.mask & (1 << (good - 1)) != 0
    }

    pub fn is_subset_of(self, other: Bundle) -> bool {
        self.mask & !other.mask == 0
    }

    pub fn is_superset_of(self, other: Bundle) -> bool {
        other.is_subset_of(self)
    }

    /// Neither bundle contains the other.
    pub fn is_incomparable(self, other: Bundle) -> bool {
        !self.is_subset_of(other) && !other.is_subset_of(self)
    }

    pub fn union(self, other: Bundle) -> Bundle {
        Bundle {
            mask: self.mask | other.mask,
            n: self.n.max(other.n),
        }
    }

    pub fn intersection(self, other: Bundle) -> Bundle {
        Bundle {
            mask: self.mask & other.mask,
            n: self.n.max(other.n),
        }
    }

    pub fn with_good(self, good: usize) -> Bundle {
        debug_assert!(good >= 1 && good <= self.n());
        Bundle {
            mask: self.mask | (1 << (good - 1)),
            n: self.n,
        }
    }

    pub fn without_good(self, good: usize) -> Bundle {
        debug_assert!(good >= 1 && good <= self.n());
        Bundle {
            mask: self.mask & !(1 << (good - 1)),
            n: self.n,
        }
    }

    /// 1-based good numbers in increasing order.
    pub fn goods(self) -> impl Iterator<Item = usize> {
        (0..self.n as usize)
            .filter(move |i| self.mask & (1 << i) != 0)
            .map(|i| i + 1)
    }

    pub fn key(self) -> String {
        let goods: Vec<String> = self.goods().map(|g| g.to_string()).collect();
        goods.join(",")
    }
}

fn check_goods(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("a bundle universe needs at least one good".into()));
    }
    if n > MAX_GOODS {
        return Err(Error::Size { n, max: MAX_GOODS });
    }
    Ok(())
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "∅")
        } else {
            write!(f, "{{{}}}", self.key())
        }
    }
}

// Bundles serialize as their keys.
impl serde::Serialize for Bundle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl fmt::Debug for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A lottery over deterministic bundles.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticBundle {
    weights: BTreeMap<Bundle, f64>,
}

impl StochasticBundle {
    pub fn new(weights: impl IntoIterator<Item = (Bundle, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (b, w) in weights {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Argument(format!("weight {w} on {b} outside [0, 1]")));
            }
            *map.entry(b).or_insert(0.0) += w;
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("weights sum to {total}, not 1")));
        }
        Ok(StochasticBundle { weights: map })
    }

    pub fn degenerate(b: Bundle) -> Self {
        StochasticBundle {
            weights: BTreeMap::from([(b, 1.0)]),
        }
    }

    /// `lambda * first + (1 - lambda) * second`.
    pub fn mix(first: Bundle, second: Bundle, lambda: f64) -> Result<Self> {
        StochasticBundle::new([(first, lambda), (second, 1.0 - lambda)])
    }

    pub fn weights(&self) -> &BTreeMap<Bundle, f64> {
        &self.weights
    }

    /// Expected value of a per-bundle quantity under the lottery.
    pub fn expect<F>(&self, mut value: F) -> Result<f64>
    where
        F: FnMut(Bundle) -> Result<f64>,
    {
        let mut acc = 0.0;
        for (&b, &w) in &self.weights {
            if w != 0.0 {
                acc += w * value(b)?;
            }
        }
        Ok(acc)
    }
}
