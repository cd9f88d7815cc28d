use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the simulation parameters, in flag order.
pub const PARAM_NAMES: [&str; 8] = [
    "rotation",
    "distance",
    "light_intensity",
    "light_color",
    "light_direction",
    "focus_blur",
    "background",
    "materials",
];

/// Default number of simulation parameters.
pub const DEFAULT_M: usize = 8;

/// Largest parameter count accepted by [`enumerate_space`].
pub const MAX_M: usize = 12;

/// Index of each named parameter within a flag vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Rotation = 0,
    Distance = 1,
    LightIntensity = 2,
    LightColor = 3,
    LightDirection = 4,
    FocusBlur = 5,
    Background = 6,
    Materials = 7,
}

impl Param {
    pub const ALL: [Param; 8] = [
        Param::Rotation,
        Param::Distance,
        Param::LightIntensity,
        Param::LightColor,
        Param::LightDirection,
        Param::FocusBlur,
        Param::Background,
        Param::Materials,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        PARAM_NAMES[self.index()]
    }
}

/// An assignment of binary flags to the first `M` simulation parameters.
///
/// Parameters beyond `M` are treated as off. The integer code packs the
/// flags big-endian: flag 0 is the most significant bit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SimParams {
    flags: Vec<bool>,
}

impl SimParams {
    pub fn new(flags: Vec<bool>) -> Result<Self> {
        if flags.is_empty() || flags.len() > MAX_M {
            return Err(Error::InvalidArgument(format!(
                "parameter count {} outside 1..={MAX_M}",
                flags.len()
            )));
        }
        Ok(SimParams { flags })
    }

    pub fn all_off(m: usize) -> Self {
        SimParams {
            flags: vec![false; m],
        }
    }

    pub fn all_on(m: usize) -> Self {
        SimParams {
            flags: vec![true; m],
        }
    }

    pub fn m(&self) -> usize {
        self.flags.len()
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn get(&self, i: usize) -> bool {
        self.flags.get(i).copied().unwrap_or(false)
    }

    pub fn is_on(&self, p: Param) -> bool {
        self.get(p.index())
    }

    pub fn with(mut self, i: usize, on: bool) -> Self {
        self.flags[i] = on;
        self
    }

    pub fn encode(&self) -> u32 {
        self.flags
            .iter()
            .fold(0u32, |acc, &f| (acc << 1) | u32::from(f))
    }

    pub fn decode(code: u32, m: usize) -> Result<Self> {
        if m == 0 || m > MAX_M {
            return Err(Error::InvalidArgument(format!("M={m} outside 1..={MAX_M}")));
        }
        if code >= (1u32 << m) {
            return Err(Error::InvalidArgument(format!(
                "code {code} out of range for M={m}"
            )));
        }
        Ok(SimParams {
            flags: (0..m).map(|i| (code >> (m - 1 - i)) & 1 == 1).collect(),
        })
    }

    pub fn bitstring(&self) -> String {
        self.flags
            .iter()
            .map(|&f| if f { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Display for SimParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

impl FromStr for SimParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let flags = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::InvalidArgument(format!(
                    "bad flag character {c:?} in {s:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        SimParams::new(flags)
    }
}

/// `params_encode`.
pub fn params_encode(p: &SimParams) -> u32 {
    p.encode()
}

/// `params_decode`.
pub fn params_decode(code: u32, m: usize) -> Result<SimParams> {
    SimParams::decode(code, m)
}

/// All `2^m` flag assignments in ascending code order.
pub fn enumerate_space(m: usize) -> Result<Vec<SimParams>> {
    if m == 0 || m > MAX_M {
        return Err(Error::InvalidArgument(format!("M={m} outside 1..={MAX_M}")));
    }
    (0..1u32 << m).map(|c| SimParams::decode(c, m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(SimParams::all_off(8).encode(), 0);
        assert_eq!(SimParams::all_on(8).encode(), 255);
        let p: SimParams = "10000000".parse().unwrap();
        assert_eq!(p.encode(), 128);
        assert_eq!(SimParams::decode(128, 8).unwrap(), p);
    }

    #[test]
    fn decode_rejects_out_of_range() {
        assert!(SimParams::decode(256, 8).is_err());
        assert!(SimParams::decode(0, 13).is_err());
    }

    #[test]
    fn enumerate_small_spaces() {
        let one = enumerate_space(1).unwrap();
        assert_eq!(
            one.iter().map(|p| p.bitstring()).collect::<Vec<_>>(),
            ["0", "1"]
        );
        let three = enumerate_space(3).unwrap();
        assert_eq!(three.len(), 8);
        assert_eq!(three[0].flags(), &[false, false, false]);
        assert_eq!(three[7].flags(), &[true, true, true]);
        assert_eq!(enumerate_space(8).unwrap().len(), 256);
        assert!(enumerate_space(0).is_err());
        assert!(enumerate_space(13).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("10x".parse::<SimParams>().is_err());
        assert!("".parse::<SimParams>().is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(flags in proptest::collection::vec(any::<bool>(), 1..=12)) {
            let p = SimParams::new(flags).unwrap();
            prop_assert_eq!(SimParams::decode(p.encode(), p.m()).unwrap(), p);
        }
    }
}
