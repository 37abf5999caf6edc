use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Camera viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Top,
    Side,
    Wrist,
}

impl View {
    pub const ALL: [View; 3] = [View::Top, View::Side, View::Wrist];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Top => "top",
            View::Side => "side",
            View::Wrist => "wrist",
        }
    }

    /// Name of the camera stream recorded for this view.
    pub fn stream_name(self) -> String {
        format!("cam_{}", self.as_str())
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top" => Ok(View::Top),
            "side" => Ok(View::Side),
            "wrist" => Ok(View::Wrist),
            other => Err(format!("unknown view `{other}` (expected top|side|wrist)")),
        }
    }
}

/// Which inputs a policy consumes. Third-person views are listed explicitly;
/// the wrist view, tactile skin and proprioception are toggles.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalityMask {
    pub third_person_views: Vec<View>,
    pub wrist: bool,
    pub tactile: bool,
    pub proprio: bool,
}

impl ModalityMask {
    pub fn all() -> Self {
        Self { third_person_views: vec![View::Top, View::Side], wrist: true, tactile: true, proprio: true }
    }

    /// Third-person cameras + wrist camera.
    pub fn vision_only() -> Self {
        Self { tactile: false, proprio: false, ..Self::all() }
    }

    /// Third-person cameras + wrist camera + skin.
    pub fn visuotactile() -> Self {
        Self { proprio: false, ..Self::all() }
    }

    /// The eight tactile × wrist × proprio rows with third-person cameras on.
    pub fn table_rows() -> Vec<ModalityMask> {
        let mut rows = Vec::with_capacity(8);
        for tactile in [false, true] {
            for wrist in [false, true] {
                for proprio in [false, true] {
                    rows.push(Self { third_person_views: vec![View::Top, View::Side], wrist, tactile, proprio });
                }
            }
        }
        rows
    }

    /// Enabled camera views in token order.
    pub fn views(&self) -> Vec<View> {
        let mut v: Vec<View> = self.third_person_views.iter().copied().filter(|v| *v != View::Wrist).collect();
        if self.wrist {
            v.push(View::Wrist);
        }
        v
    }

    pub fn is_empty(&self) -> bool {
        self.views().is_empty() && !self.tactile && !self.proprio
    }

    /// Short stable label such as `3p+wrist+skin`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.third_person_views.is_empty() {
            parts.push("3p".to_string());
        }
        if self.wrist {
            parts.push("wrist".into());
        }
        if self.tactile {
            parts.push("skin".into());
        }
        if self.proprio {
            parts.push("proprio".into());
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_cover_all_toggle_combinations() {
        let rows = ModalityMask::table_rows();
        assert_eq!(rows.len(), 8);
        let labels: std::collections::BTreeSet<_> = rows.iter().map(ModalityMask::label).collect();
        assert_eq!(labels.len(), 8);
        assert!(rows.iter().all(|r| r.third_person_views == vec![View::Top, View::Side]));
        assert!(rows.contains(&ModalityMask::vision_only()));
        assert!(rows.contains(&ModalityMask::visuotactile()));
    }

    #[test]
    fn wrist_is_ordered_last_among_views() {
        let m = ModalityMask::all();
        assert_eq!(m.views(), vec![View::Top, View::Side, View::Wrist]);
        assert_eq!(m.label(), "3p+wrist+skin+proprio");
    }
}
