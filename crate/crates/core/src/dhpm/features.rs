//! Argument layout of the dynamics network.
//!
//! Features are packed as `[t?][x?, y?][aux...][u per channel][partials...]`,
//! where each entry of the partial menu contributes one column per channel in
//! channel order. For `(u, v)` with menu `x, xx` that gives
//! `u, v, u_x, v_x, u_xx, v_xx`; for vorticity with aux velocities it gives
//! `u, v, w, w_x, w_xx`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::DhpmError;
use crate::nn::{Component, DerivativeJet, JetRequest};

/// One spatial partial derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Partial {
    X(usize),
    Y(usize),
    Xy,
}

impl Partial {
    pub fn component(self) -> Component {
        match self {
            Partial::X(k) => Component::x(k).expect("validated order"),
            Partial::Y(k) => Component::y(k).expect("validated order"),
            Partial::Xy => Component::Xy,
        }
    }

    pub fn order(self) -> usize {
        match self {
            Partial::X(k) | Partial::Y(k) => k,
            Partial::Xy => 2,
        }
    }
}

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Partial::X(k) => write!(f, "{}", "x".repeat(k)),
            Partial::Y(k) => write!(f, "{}", "y".repeat(k)),
            Partial::Xy => write!(f, "xy"),
        }
    }
}

impl TryFrom<String> for Partial {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let k = s.len();
        match s.as_str() {
            "xy" | "yx" => Ok(Partial::Xy),
            _ if k >= 1 && k <= JetRequest::MAX_X_ORDER && s.chars().all(|c| c == 'x') => Ok(Partial::X(k)),
            _ if k >= 1 && k <= JetRequest::MAX_Y_ORDER && s.chars().all(|c| c == 'y') => Ok(Partial::Y(k)),
            _ => Err(format!("unsupported partial derivative {s:?}")),
        }
    }
}

impl From<Partial> for String {
    fn from(p: Partial) -> String {
        p.to_string()
    }
}

/// Where one feature column comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Time,
    /// Spatial coordinate `axis` (0 = x, 1 = y).
    Space(usize),
    Aux(usize),
    Field { channel: usize, component: Component },
}

fn default_dims() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    #[serde(default = "default_dims")]
    pub dims: usize,
    /// Highest x-derivative in one dimension; ignored when `derivative_menu` is set.
    pub spatial_order: usize,
    #[serde(default)]
    pub include_t: bool,
    /// Feeds the spatial coordinates (x, and y in two dimensions).
    #[serde(default)]
    pub include_x: bool,
    pub channels: Vec<String>,
    #[serde(default)]
    pub aux_channels: Vec<String>,
    /// Explicit partials; empty means `x, xx, ...` up to `spatial_order`.
    #[serde(default)]
    pub derivative_menu: Vec<Partial>,
}

impl FeatureConfig {
    /// Scalar one-dimensional field `u` with derivatives through `order`.
    pub fn scalar_1d(order: usize) -> Self {
        FeatureConfig {
            dims: 1,
            spatial_order: order,
            include_t: false,
            include_x: false,
            channels: vec!["u".into()],
            aux_channels: vec![],
            derivative_menu: vec![],
        }
    }

    pub fn validate(&self) -> Result<(), DhpmError> {
        let bad = |m: String| Err(DhpmError::Config(m));
        if self.dims != 1 && self.dims != 2 {
            return bad(format!("dims must be 1 or 2, got {}", self.dims));
        }
        if self.channels.is_empty() {
            return bad("at least one modeled channel is required".into());
        }
        if self.derivative_menu.is_empty() {
            if !(1..=JetRequest::MAX_X_ORDER).contains(&self.spatial_order) {
                return bad(format!("spatial_order must be in 1..=4, got {}", self.spatial_order));
            }
        } else {
            for p in &self.derivative_menu {
                let ok = match *p {
                    Partial::X(k) => (1..=JetRequest::MAX_X_ORDER).contains(&k),
                    Partial::Y(k) => self.dims == 2 && (1..=JetRequest::MAX_Y_ORDER).contains(&k),
                    Partial::Xy => self.dims == 2,
                };
                if !ok {
                    return bad(format!("partial {p} is not available in {} dimension(s)", self.dims));
                }
            }
            let mut seen = self.derivative_menu.clone();
            seen.sort_by_key(|p| p.to_string());
            seen.dedup();
            if seen.len() != self.derivative_menu.len() {
                return bad("derivative_menu lists a partial twice".into());
            }
        }
        Ok(())
    }

    pub fn partials(&self) -> Vec<Partial> {
        if self.derivative_menu.is_empty() {
            (1..=self.spatial_order).map(Partial::X).collect()
        } else {
            self.derivative_menu.clone()
        }
    }

    /// Jet the u networks must provide: `u_t` plus every partial on the menu.
    pub fn jet_request(&self) -> JetRequest {
        let parts = self.partials();
        let max = |f: fn(Partial) -> usize| parts.iter().map(|&p| f(p)).max().unwrap_or(0);
        JetRequest {
            time: true,
            x_order: max(|p| if let Partial::X(k) = p { k } else { 0 }),
            y_order: max(|p| if let Partial::Y(k) = p { k } else { 0 }),
            mixed_xy: parts.contains(&Partial::Xy),
        }
    }

    pub fn sources(&self) -> Vec<FeatureSource> {
        let mut s = Vec::new();
        if self.include_t {
            s.push(FeatureSource::Time);
        }
        if self.include_x {
            s.extend((0..self.dims).map(FeatureSource::Space));
        }
        s.extend((0..self.aux_channels.len()).map(FeatureSource::Aux));
        let c = self.channels.len();
        s.extend((0..c).map(|channel| FeatureSource::Field {
            channel,
            component: Component::Value,
        }));
        for p in self.partials() {
            s.extend((0..c).map(|channel| FeatureSource::Field {
                channel,
                component: p.component(),
            }));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.sources().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let axes = ["x", "y"];
        self.sources()
            .into_iter()
            .map(|s| match s {
                FeatureSource::Time => "t".to_string(),
                FeatureSource::Space(a) => axes[a].to_string(),
                FeatureSource::Aux(k) => self.aux_channels[k].clone(),
                FeatureSource::Field { channel, component } => {
                    let name = &self.channels[channel];
                    match self.partials().into_iter().find(|p| p.component() == component) {
                        Some(p) => format!("{name}_{p}"),
                        None => name.clone(),
                    }
                }
            })
            .collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }
}

/// Packs one point's feature vector from per-channel jets (`jets[c].value[0]` is channel `c`).
pub fn build_features(
    jets: &[DerivativeJet],
    cfg: &FeatureConfig,
    point: &[f64],
    aux: &[f64],
) -> Result<Vec<f64>, DhpmError> {
    cfg.validate()?;
    if jets.len() != cfg.channels.len() {
        return Err(DhpmError::Config(format!(
            "{} jets for {} channels",
            jets.len(),
            cfg.channels.len()
        )));
    }
    if aux.len() != cfg.aux_channels.len() {
        return Err(DhpmError::Config(format!(
            "{} aux values for {} aux channels",
            aux.len(),
            cfg.aux_channels.len()
        )));
    }
    if point.len() != 1 + cfg.dims {
        return Err(DhpmError::Config(format!("point {point:?} has the wrong dimension")));
    }
    let missing = |what: String| DhpmError::Config(format!("jet does not carry {what}"));
    let mut out = Vec::with_capacity(cfg.len());
    for src in cfg.sources() {
        let v = match src {
            FeatureSource::Time => point[0],
            FeatureSource::Space(a) => point[1 + a],
            FeatureSource::Aux(k) => aux[k],
            FeatureSource::Field { channel, component } => {
                let j = &jets[channel];
                let first = |v: &Vec<f64>| v.first().copied();
                let got = match component {
                    Component::Value => first(&j.value),
                    Component::Xy => j.mixed_xy.as_ref().and_then(first),
                    c => match (1..=4).find(|&k| Component::x(k) == Some(c)) {
                        Some(k) => j.spatial.get(k - 1).and_then(first),
                        None => (1..=2)
                            .find(|&k| Component::y(k) == Some(c))
                            .and_then(|k| j.spatial_y.get(k - 1).and_then(first)),
                    },
                };
                got.ok_or_else(|| missing(format!("{component:?} for channel {channel}")))?
            }
        };
        out.push(v);
    }
    Ok(out)
}
