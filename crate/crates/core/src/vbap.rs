//! Two-dimensional vector-base amplitude panning over a five-speaker ring,
//! stem rendering and the fixed passive downmix.
//!
//! Angles are in degrees, counterclockwise-positive with 0 at front center,
//! so the left hemisphere is positive: FL = +30, RL = +110, FR = -30,
//! RR = -110. Internally all angles are normalized to `[0, 360)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audio::MultichannelAudio;
use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

pub const FL: usize = 0;
pub const RL: usize = 1;
pub const C: usize = 2;
pub const FR: usize = 3;
pub const RR: usize = 4;

/// Channel names in on-disk order.
pub const CHANNEL_NAMES: [&str; 5] = ["FL", "RL", "C", "FR", "RR"];

/// Stem names in canonical order.
pub const STEM_NAMES: [&str; 4] = ["vocals", "drums", "bass", "other"];

/// Normalize an angle in degrees to `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Shortest angular distance in `[0, 180]`.
pub fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let d = normalize_deg(a - b);
    d.min(360.0 - d)
}

fn unit(deg: f64) -> [f64; 2] {
    let r = normalize_deg(deg).to_radians();
    [r.cos(), r.sin()]
}

/// Loudspeaker azimuths in channel order `[FL, RL, C, FR, RR]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLayout {
    azimuths: [f64; 5],
    /// Channel indices sorted by normalized azimuth.
    ring: [usize; 5],
}

impl Default for SpeakerLayout {
    fn default() -> Self {
        Self::new([30.0, 110.0, 0.0, -30.0, -110.0]).expect("ITU layout is valid")
    }
}

impl SpeakerLayout {
    pub fn new(azimuths_deg: [f64; 5]) -> Result<Self> {
        if azimuths_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("speaker azimuths must be finite".into()));
        }
        let mut ring = [0, 1, 2, 3, 4];
        ring.sort_by(|&a, &b| normalize_deg(azimuths_deg[a]).total_cmp(&normalize_deg(azimuths_deg[b])));
        for i in 0..5 {
            let a = normalize_deg(azimuths_deg[ring[i]]);
            let b = normalize_deg(azimuths_deg[ring[(i + 1) % 5]]);
            let gap = normalize_deg(b - a);
            if gap == 0.0 {
                return Err(Error::Config("speaker azimuths must be distinct".into()));
            }
            if gap >= 180.0 {
                return Err(Error::Config(format!("adjacent speakers {a} and {b} are 180 degrees or more apart")));
            }
        }
        Ok(Self { azimuths: azimuths_deg, ring })
    }

    pub fn azimuths(&self) -> &[f64; 5] {
        &self.azimuths
    }

    /// Unit direction vector of a channel.
    pub fn direction(&self, channel: usize) -> [f64; 2] {
        unit(self.azimuths[channel])
    }

    /// Adjacent channel pair `(a, b)` whose counterclockwise arc from `a` to
    /// `b` contains `theta` (start inclusive).
    fn bracket(&self, theta: f64) -> (usize, usize) {
        let theta = normalize_deg(theta);
        for i in 0..5 {
            let a = self.ring[i];
            let b = self.ring[(i + 1) % 5];
            let start = normalize_deg(self.azimuths[a]);
            let arc = normalize_deg(normalize_deg(self.azimuths[b]) - start);
            if normalize_deg(theta - start) < arc {
                return (a, b);
            }
        }
        unreachable!("the ring covers the full circle")
    }

    /// Load from a JSON object keyed by channel name, e.g.
    /// `{"FL": 30, "RL": 110, "C": 0, "FR": -30, "RR": -110}`.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, f64> = serde_json::from_str(&text)?;
        let mut az = [0.0; 5];
        for (i, name) in CHANNEL_NAMES.iter().enumerate() {
            az[i] = *map
                .get(*name)
                .ok_or_else(|| Error::Config(format!("speaker layout is missing channel {name}")))?;
        }
        if map.len() != 5 {
            return Err(Error::Config("speaker layout must name exactly FL, RL, C, FR, RR".into()));
        }
        Self::new(az)
    }
}

/// Per-channel loudspeaker gains in `[FL, RL, C, FR, RR]` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainVector(pub [f64; 5]);

impl GainVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Pairwise VBAP gains for a virtual source at `theta_deg`.
///
/// The two speakers bracketing the source receive the solution of
/// `[l1 l2] g = p`, clamped at zero and scaled to unit L2 norm.
pub fn pan_gains(theta_deg: f64, layout: &SpeakerLayout) -> GainVector {
    let theta = normalize_deg(theta_deg);
    let mut gains = [0.0; 5];
    if let Some(ch) = (0..5).find(|&c| normalize_deg(layout.azimuths[c]) == theta) {
        gains[ch] = 1.0;
        return GainVector(gains);
    }
    let (a, b) = layout.bracket(theta);
    let l1 = layout.direction(a);
    let l2 = layout.direction(b);
    let p = unit(theta);
    let det = l1[0] * l2[1] - l1[1] * l2[0];
    let g1 = ((p[0] * l2[1] - p[1] * l2[0]) / det).max(0.0);
    let g2 = ((l1[0] * p[1] - l1[1] * p[0]) / det).max(0.0);
    let norm = (g1 * g1 + g2 * g2).sqrt();
    gains[a] = g1 / norm;
    gains[b] = g2 / norm;
    GainVector(gains)
}

/// Direction of the gain-weighted sum of speaker vectors, in `[0, 360)`.
pub fn estimate_direction_from_gains(gains: &[f64; 5], layout: &SpeakerLayout) -> Result<f64> {
    if gains.iter().any(|g| *g < 0.0 || !g.is_finite()) {
        return Err(Error::InvalidInput("gains must be finite and nonnegative".into()));
    }
    if gains.iter().all(|&g| g == 0.0) {
        return Err(Error::UndefinedDirection);
    }
    let (mut x, mut y) = (0.0, 0.0);
    for (c, &g) in gains.iter().enumerate() {
        let l = layout.direction(c);
        x += g * l[0];
        y += g * l[1];
    }
    if x == 0.0 && y == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    Ok(normalize_deg(y.atan2(x).to_degrees()))
}

/// One azimuth per stem, in stem order.
///
/// Serialized as a JSON object keyed by stem name (`vocals`, `drums`, `bass`,
/// `other` for four stems, otherwise the stem index).
#[derive(Debug, Clone, PartialEq)]
pub struct PanningConfig {
    directions: Vec<f64>,
}

impl PanningConfig {
    pub fn new(directions: Vec<f64>) -> Result<Self> {
        if directions.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidInput("panning directions must be finite".into()));
        }
        Ok(Self { directions: directions.into_iter().map(normalize_deg).collect() })
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    fn names(&self) -> Vec<String> {
        if self.directions.len() == STEM_NAMES.len() {
            STEM_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.directions.len()).map(|i| i.to_string()).collect()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Serialize for PanningConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.directions.len()))?;
        for (name, d) in self.names().iter().zip(&self.directions) {
            map.serialize_entry(name, d)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for PanningConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let map = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let directions = if map.len() == STEM_NAMES.len() && STEM_NAMES.iter().all(|n| map.contains_key(*n)) {
            STEM_NAMES.iter().map(|n| map[*n]).collect()
        } else {
            let mut indexed = Vec::with_capacity(map.len());
            for (k, v) in &map {
                let i: usize = k.parse().map_err(|_| D::Error::custom(format!("unknown stem name {k:?}")))?;
                indexed.push((i, *v));
            }
            indexed.sort_by_key(|(i, _)| *i);
            if indexed.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
                return Err(D::Error::custom("stem indices must be 0..n"));
            }
            indexed.into_iter().map(|(_, v)| v).collect()
        };
        PanningConfig::new(directions).map_err(D::Error::custom)
    }
}

/// Pan each (mono) stem to its direction and sum into five channels.
///
/// Multichannel stems are averaged to mono first.
pub fn render_stems(
    stems: &[MultichannelAudio],
    config: &PanningConfig,
    layout: &SpeakerLayout,
) -> Result<MultichannelAudio> {
    if stems.is_empty() {
        return Err(Error::InvalidInput("no stems to render".into()));
    }
    if stems.len() != config.len() {
        return Err(Error::InvalidInput(format!(
            "{} stems but {} panning directions",
            stems.len(),
            config.len()
        )));
    }
    let len = stems[0].len();
    let rate = stems[0].sample_rate();
    if stems.iter().any(|s| s.len() != len || s.sample_rate() != rate) {
        return Err(Error::Shape("stems differ in length or sample rate".into()));
    }
    let mut out = vec![vec![0.0; len]; 5];
    for (stem, &theta) in stems.iter().zip(config.directions()) {
        let mono;
        let signal = if stem.num_channels() == 1 {
            stem.channel(0)
        } else {
            mono = stem.to_mono();
            mono.channel(0)
        };
        let g = pan_gains(theta, layout);
        for (ch, &gain) in out.iter_mut().zip(&g.0) {
            if gain != 0.0 {
                for (o, &s) in ch.iter_mut().zip(signal) {
                    *o += gain * s;
                }
            }
        }
    }
    Ok(MultichannelAudio::from_parts_unchecked(rate, out))
}

fn downmix_planes(five: [&[f64]; 5]) -> (Vec<f64>, Vec<f64>) {
    let left = five[FL].iter().zip(five[RL]).zip(five[C]).map(|((f, r), c)| f + r + c / 2.0).collect();
    let right = five[FR].iter().zip(five[RR]).zip(five[C]).map(|((f, r), c)| f + r + c / 2.0).collect();
    (left, right)
}

/// Passive downmix `L = FL + RL + C/2`, `R = FR + RR + C/2`.
pub fn downmix(five: &MultichannelAudio) -> Result<MultichannelAudio> {
    if five.num_channels() != 5 {
        return Err(Error::Shape(format!("downmix needs 5 channels, got {}", five.num_channels())));
    }
    let ch = five.channels();
    let (l, r) = downmix_planes([&ch[0], &ch[1], &ch[2], &ch[3], &ch[4]]);
    Ok(MultichannelAudio::from_parts_unchecked(five.sample_rate(), vec![l, r]))
}

/// The downmix formula applied to magnitudes.
///
/// Diagnostics only: magnitudes of a sum are not sums of magnitudes, so this
/// is not the magnitude of the downmixed signal.
pub fn downmix_magnitude_approx(five: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
    if five.channels() != 5 {
        return Err(Error::Shape(format!("downmix needs 5 channels, got {}", five.channels())));
    }
    let (l, r) = downmix_planes([five.plane(0), five.plane(1), five.plane(2), five.plane(3), five.plane(4)]);
    let mut data = l;
    data.extend(r);
    MagnitudeSpectrogram::from_vec(2, five.bins(), five.frames(), data)
}
