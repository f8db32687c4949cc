//! Probe offset, die-to-stage mapping and Z depth search.
//!
//! Conventions: the positioning camera and the stage share axis directions
//! (no rotation). Z grows away from the DUT, so the clearance between tip and
//! die at stage height `z` is `z - surface`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{steps_to_units, DiePoint, StagePosition};
use crate::motion::MotionLimits;
use crate::pulse::ProbeTip;

/// Largest plausible tip-to-camera offset, mm.
pub const MAX_OFFSET_MM: f64 = 50.0;

/// Resolution used for exact die/stage arithmetic, mm.
const LATTICE: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        (0.0..f64::from(width)).contains(&self.u) && (0.0..f64::from(height)).contains(&self.v)
    }
}

/// Offset from the positioning camera's center to the probe tip's center.
/// Adding it to a camera-located stage point gives the probe-aligned target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetCalibration {
    pub dx: f64,
    pub dy: f64,
    /// Calibration camera scale, micrometres per pixel.
    pub pixel_scale: f64,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    /// Identity of the tip this was measured with, e.g. `4mm-CW`.
    #[serde(default)]
    pub probe: Option<String>,
    /// Camera-to-stage rotation, degrees. Reserved; always 0 for now.
    #[serde(default)]
    pub rotation_deg: f64,
}

impl OffsetCalibration {
    /// An offset entered directly rather than measured.
    pub fn from_offset(dx: f64, dy: f64) -> Self {
        OffsetCalibration {
            dx,
            dy,
            pixel_scale: 1.0,
            timestamp: None,
            probe: None,
            rotation_deg: 0.0,
        }
    }

    pub fn for_tip(mut self, tip: &ProbeTip, at: DateTime<Utc>) -> Self {
        self.probe = Some(tip.id());
        self.timestamp = Some(at);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_scale.is_finite() && self.pixel_scale > 0.0) {
            return Err(Error::validation("pixel scale must be positive"));
        }
        if !(self.dx.is_finite() && self.dy.is_finite()) {
            return Err(Error::validation("offset must be finite"));
        }
        if self.dx.hypot(self.dy) >= MAX_OFFSET_MM {
            return Err(Error::validation(format!(
                "offset ({}, {}) mm is implausibly large",
                self.dx, self.dy
            )));
        }
        if self.rotation_deg != 0.0 {
            return Err(Error::validation("camera rotation is not supported"));
        }
        Ok(())
    }

    /// Where the probe center appears in the calibration image, given the
    /// camera center. Inverse of [`compute_probe_offset`].
    pub fn probe_pixel(&self, camera_center: PixelPoint) -> PixelPoint {
        PixelPoint {
            u: camera_center.u + self.dx * 1000.0 / self.pixel_scale,
            v: camera_center.v + self.dy * 1000.0 / self.pixel_scale,
        }
    }
}

/// Offset from pixel observations of both centers in the calibration camera.
pub fn compute_probe_offset(
    probe_center: PixelPoint,
    camera_center: PixelPoint,
    pixel_scale: f64,
) -> Result<OffsetCalibration> {
    let cal = OffsetCalibration {
        dx: (probe_center.u - camera_center.u) * pixel_scale / 1000.0,
        dy: (probe_center.v - camera_center.v) * pixel_scale / 1000.0,
        pixel_scale,
        timestamp: None,
        probe: None,
        rotation_deg: 0.0,
    };
    cal.validate()?;
    Ok(cal)
}

/// Die corner located with the positioning camera, plus the die size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DieAnchor {
    /// Stage position of the die corner; `z` is the working height.
    pub corner: StagePosition,
    pub width: f64,
    pub height: f64,
}

impl DieAnchor {
    pub fn validate(&self, limits: &MotionLimits) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::validation("die size must be positive"));
        }
        limits.check(&self.corner)?;
        limits.check(&self.corner.offset(self.width, self.height, 0.0))
    }

    pub fn contains(&self, p: &DiePoint) -> bool {
        let eps = 1e-9;
        (-eps..=self.width + eps).contains(&p.x) && (-eps..=self.height + eps).contains(&p.y)
    }
}

fn lattice(v: f64) -> i64 {
    (v / LATTICE).round() as i64
}

/// Stage target that puts the probe tip over `p`.
pub fn die_to_stage(
    p: &DiePoint,
    anchor: &DieAnchor,
    cal: &OffsetCalibration,
) -> Result<StagePosition> {
    if !anchor.contains(p) {
        return Err(Error::validation(format!(
            "die point ({}, {}) outside the {} x {} mm die",
            p.x, p.y, anchor.width, anchor.height
        )));
    }
    Ok(die_to_stage_unchecked(p, anchor, cal))
}

/// As [`die_to_stage`] without the extent check, for border scans.
///
/// Works on the 2.5 um lattice so that differences of mapped points equal
/// differences of die points exactly.
pub fn die_to_stage_unchecked(
    p: &DiePoint,
    anchor: &DieAnchor,
    cal: &OffsetCalibration,
) -> StagePosition {
    let c = &anchor.corner;
    StagePosition {
        x: steps_to_units(lattice(c.x) + lattice(p.x) + lattice(cal.dx), LATTICE),
        y: steps_to_units(lattice(c.y) + lattice(p.y) + lattice(cal.dy), LATTICE),
        z: c.z,
    }
}

/// Die point under the probe tip when the stage is at `s`.
pub fn stage_to_die(s: &StagePosition, anchor: &DieAnchor, cal: &OffsetCalibration) -> DiePoint {
    let c = &anchor.corner;
    DiePoint {
        x: steps_to_units(lattice(s.x) - lattice(c.x) - lattice(cal.dx), LATTICE),
        y: steps_to_units(lattice(s.y) - lattice(c.y) - lattice(cal.dy), LATTICE),
    }
}

/// Answers "is there at least `threshold` mm between tip and die at height z?".
/// On the bench this is the operator sliding a sheet of paper under the tip.
pub trait GapOracle {
    fn has_clearance(&mut self, z: f64, threshold: f64) -> Result<bool>;
}

/// A flat die surface at a known height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedSurface {
    pub surface_z: f64,
    pub probes: u32,
}

impl SimulatedSurface {
    pub fn new(surface_z: f64) -> Self {
        SimulatedSurface {
            surface_z,
            probes: 0,
        }
    }
}

impl GapOracle for SimulatedSurface {
    fn has_clearance(&mut self, z: f64, threshold: f64) -> Result<bool> {
        self.probes += 1;
        Ok(z - self.surface_z >= threshold - 1e-9)
    }
}

/// Lowest stage height that still leaves `gap_threshold` of clearance.
///
/// Steps down from `start_z` with doubling strides until clearance is lost,
/// then bisects the last stride down to `step`. The result always has
/// clearance and lies within `step` of the boundary.
pub fn find_z_touch(
    oracle: &mut dyn GapOracle,
    start_z: f64,
    step: f64,
    gap_threshold: f64,
) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::validation("z step must be positive"));
    }
    if !(gap_threshold.is_finite() && gap_threshold >= 0.0) {
        return Err(Error::validation("gap threshold must be non-negative"));
    }
    if !oracle.has_clearance(start_z, gap_threshold)? {
        return Err(Error::SurfaceNotFound(format!(
            "start height {start_z} mm is already below the surface"
        )));
    }
    let floor = 0.0;
    let mut clear = start_z;
    let mut stride = step;
    let blocked = loop {
        if clear <= floor {
            return Err(Error::SurfaceNotFound(format!(
                "no contact between {start_z} mm and the end of travel"
            )));
        }
        let z = (clear - stride).max(floor);
        if oracle.has_clearance(z, gap_threshold)? {
            clear = z;
            stride *= 2.0;
        } else {
            break z;
        }
    };
    let mut blocked = blocked;
    while clear - blocked > step {
        let mid = 0.5 * (clear + blocked);
        if oracle.has_clearance(mid, gap_threshold)? {
            clear = mid;
        } else {
            blocked = mid;
        }
    }
    Ok(clear)
}

pub const CALIBRATION_SCHEMA: u32 = 1;

/// Per-tip offsets plus the die anchor, kept in the workspace as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStore {
    pub schema_version: u32,
    #[serde(default)]
    pub mounted_tip: Option<String>,
    #[serde(default)]
    pub offsets: BTreeMap<String, OffsetCalibration>,
    #[serde(default)]
    pub anchor: Option<DieAnchor>,
}

impl Default for CalibrationStore {
    fn default() -> Self {
        CalibrationStore {
            schema_version: CALIBRATION_SCHEMA,
            mounted_tip: None,
            offsets: BTreeMap::new(),
            anchor: None,
        }
    }
}

impl CalibrationStore {
    /// Loads the store, or an empty one if the file does not exist yet.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => {
                let store: CalibrationStore = serde_json::from_str(&text)?;
                if store.schema_version != CALIBRATION_SCHEMA {
                    return Err(Error::validation(format!(
                        "unsupported calibration schema {}",
                        store.schema_version
                    )));
                }
                Ok(store)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Records a tip change. The new tip's previous offset no longer holds
    /// after a remount, so it is dropped.
    pub fn mount_tip(&mut self, tip: &ProbeTip) {
        let id = tip.id();
        if self.mounted_tip.as_deref() != Some(id.as_str()) {
            self.offsets.remove(&id);
            self.mounted_tip = Some(id);
        }
    }

    /// Stores a measured offset for the tip it names.
    pub fn put(&mut self, cal: OffsetCalibration) -> Result<()> {
        cal.validate()?;
        let id = cal
            .probe
            .clone()
            .ok_or_else(|| Error::validation("calibration does not name its probe tip"))?;
        self.offsets.insert(id, cal);
        Ok(())
    }

    pub fn get(&self, tip: &ProbeTip) -> Option<&OffsetCalibration> {
        self.offsets.get(&tip.id())
    }

    /// Offset for the mounted tip.
    pub fn active(&self) -> Option<&OffsetCalibration> {
        self.offsets.get(self.mounted_tip.as_ref()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::Winding;

    #[test]
    fn offset_examples() {
        let c = PixelPoint::new(100.0, 100.0);
        let cal = compute_probe_offset(c, c, 7.3).unwrap();
        assert_eq!((cal.dx, cal.dy), (0.0, 0.0));
        let cal = compute_probe_offset(PixelPoint::new(200.0, 100.0), c, 10.0).unwrap();
        assert_eq!((cal.dx, cal.dy), (1.0, 0.0));
        assert!(compute_probe_offset(c, c, 0.0).is_err());
        assert!(compute_probe_offset(PixelPoint::new(6000.0, 0.0), c, 10.0).is_err());
        assert_eq!(cal.probe_pixel(c), PixelPoint::new(200.0, 100.0));
    }

    fn anchor() -> DieAnchor {
        DieAnchor {
            corner: StagePosition::new(40.0, 30.0, 12.1),
            width: 22.0,
            height: 9.0,
        }
    }

    #[test]
    fn die_mapping() {
        let zero = OffsetCalibration::from_offset(0.0, 0.0);
        let a = anchor();
        assert_eq!(
            die_to_stage(&DiePoint::new(0.0, 0.0), &a, &zero).unwrap(),
            a.corner
        );
        let cal = OffsetCalibration::from_offset(1.0, 0.0);
        assert_eq!(
            die_to_stage(&DiePoint::new(1.0, 1.0), &a, &cal).unwrap(),
            StagePosition::new(42.0, 31.0, 12.1)
        );
        assert!(die_to_stage(&DiePoint::new(23.0, 1.0), &a, &cal).is_err());
        let s = die_to_stage(&DiePoint::new(5.5, 2.25), &a, &cal).unwrap();
        assert_eq!(stage_to_die(&s, &a, &cal), DiePoint::new(5.5, 2.25));
    }

    #[test]
    fn z_touch_examples() {
        let mut surf = SimulatedSurface::new(12.0);
        let z = find_z_touch(&mut surf, 30.0, 0.025, 0.1).unwrap();
        assert!((12.1 - 1e-9..=12.1 + 0.025).contains(&z), "{z}");

        let mut surf = SimulatedSurface::new(12.0);
        let z = find_z_touch(&mut surf, 30.0, 0.025, 0.0).unwrap();
        assert!((12.0 - 1e-9..=12.025).contains(&z), "{z}");

        let mut surf = SimulatedSurface::new(12.0);
        assert!(matches!(
            find_z_touch(&mut surf, 11.0, 0.025, 0.1),
            Err(Error::SurfaceNotFound(_))
        ));

        let mut surf = SimulatedSurface::new(-5.0);
        assert!(matches!(
            find_z_touch(&mut surf, 20.0, 0.025, 0.1),
            Err(Error::SurfaceNotFound(_))
        ));
        assert!(find_z_touch(&mut SimulatedSurface::new(0.0), 5.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn store_invalidates_on_tip_change() {
        let big = ProbeTip::new(4.0, Winding::Cw);
        let small = ProbeTip::new(1.0, Winding::Ccw);
        let mut store = CalibrationStore::default();
        store.mount_tip(&big);
        let at = crate::clock::default_epoch();
        store
            .put(OffsetCalibration::from_offset(1.0, -2.0).for_tip(&big, at))
            .unwrap();
        assert_eq!(store.active().unwrap().dx, 1.0);
        store.mount_tip(&big);
        assert!(store.active().is_some());
        store.mount_tip(&small);
        assert!(store.active().is_none());
        assert!(store.get(&big).is_some());
        store.mount_tip(&big);
        assert!(store.get(&big).is_none());
        assert!(store.put(OffsetCalibration::from_offset(1.0, 1.0)).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calibration.json");
        assert_eq!(CalibrationStore::load(&path).unwrap(), CalibrationStore::default());
        store
            .put(OffsetCalibration::from_offset(0.5, 0.25).for_tip(&big, at))
            .unwrap();
        store.anchor = Some(anchor());
        store.save(&path).unwrap();
        assert_eq!(CalibrationStore::load(&path).unwrap(), store);
    }
}
