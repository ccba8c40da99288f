//! The joint allocation produced by every allocator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Who drives a navigation or capture phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    Auto,
    CoControl(usize),
}

impl Control {
    /// Action 0 is autonomous, action `h + 1` is co-control by human `h`.
    pub fn from_action(a: usize) -> Self {
        match a {
            0 => Control::Auto,
            h => Control::CoControl(h - 1),
        }
    }

    pub fn action(self) -> usize {
        match self {
            Control::Auto => 0,
            Control::CoControl(h) => h + 1,
        }
    }

    pub fn operator(self) -> Option<usize> {
        match self {
            Control::Auto => None,
            Control::CoControl(h) => Some(h),
        }
    }
}

/// Who classifies a captured image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classifier {
    Onboard,
    Human(usize),
}

impl Classifier {
    /// Action 0 is onboard, action `h + 1` is human `h`.
    pub fn from_action(a: usize) -> Self {
        match a {
            0 => Classifier::Onboard,
            h => Classifier::Human(h - 1),
        }
    }

    pub fn action(self) -> usize {
        match self {
            Classifier::Onboard => 0,
            Classifier::Human(h) => h + 1,
        }
    }
}

/// Per-POI assignment. Each POI is visited once, by its assigned robot, so
/// the navigation and capture controls are indexed by POI as well.
/// A robot visits its POIs in ascending POI index order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub poi_to_robot: Vec<usize>,
    pub nav_control: Vec<Control>,
    pub capture_control: Vec<Control>,
    pub classify: Vec<Classifier>,
}

impl AllocationDecision {
    /// All POIs on robot 0, fully autonomous, classified onboard.
    pub fn baseline(j: usize) -> Self {
        Self {
            poi_to_robot: vec![0; j],
            nav_control: vec![Control::Auto; j],
            capture_control: vec![Control::Auto; j],
            classify: vec![Classifier::Onboard; j],
        }
    }

    pub fn len(&self) -> usize {
        self.poi_to_robot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poi_to_robot.is_empty()
    }

    pub fn validate(&self, k: usize, i: usize, j: usize) -> Result<()> {
        let lens = [
            self.poi_to_robot.len(),
            self.nav_control.len(),
            self.capture_control.len(),
            self.classify.len(),
        ];
        if lens.iter().any(|&l| l != j) {
            return Err(Error::Contract(format!("decision lengths {lens:?} do not match {j} POIs")));
        }
        for p in 0..j {
            if self.poi_to_robot[p] >= i {
                return Err(Error::Contract(format!("POI {p} assigned to robot {} of {i}", self.poi_to_robot[p])));
            }
            for c in [self.nav_control[p], self.capture_control[p]] {
                if let Control::CoControl(h) = c {
                    if h >= k {
                        return Err(Error::Contract(format!("POI {p} co-controlled by human {h} of {k}")));
                    }
                }
            }
            if let Classifier::Human(h) = self.classify[p] {
                if h >= k {
                    return Err(Error::Contract(format!("POI {p} classified by human {h} of {k}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_codes_round_trip() {
        for a in 0..5 {
            assert_eq!(Control::from_action(a).action(), a);
            assert_eq!(Classifier::from_action(a).action(), a);
        }
        assert_eq!(Control::from_action(0), Control::Auto);
        assert_eq!(Classifier::from_action(2), Classifier::Human(1));
    }

    #[test]
    fn validation() {
        let mut d = AllocationDecision::baseline(3);
        assert!(d.validate(1, 1, 3).is_ok());
        assert!(d.validate(1, 1, 2).is_err());
        d.classify[1] = Classifier::Human(1);
        assert!(d.validate(1, 1, 3).is_err());
        assert!(d.validate(2, 1, 3).is_ok());
        d.poi_to_robot[0] = 1;
        assert!(d.validate(2, 1, 3).is_err());
    }
}
