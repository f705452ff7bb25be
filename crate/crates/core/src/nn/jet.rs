//! Taylor-mode propagation of input derivatives through a dense network.
//!
//! A [`JetBatch`] carries, for a batch of rows, the value of every unit together
//! with its derivatives along the time axis, the first spatial axis (through
//! fourth order), the second spatial axis (through second order) and the mixed
//! second derivative. Affine layers act linearly on every component; the
//! activation is pushed through with the univariate Faà di Bruno formulas.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::activation::{Activation, DERIV_SLOTS};
use super::NnError;

/// One derivative slot of a jet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Value,
    T,
    X1,
    X2,
    X3,
    X4,
    Y1,
    Y2,
    Xy,
}

pub const N_COMPONENTS: usize = 9;

impl Component {
    pub const ALL: [Component; N_COMPONENTS] = [
        Component::Value,
        Component::T,
        Component::X1,
        Component::X2,
        Component::X3,
        Component::X4,
        Component::Y1,
        Component::Y2,
        Component::Xy,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn x(order: usize) -> Option<Component> {
        match order {
            0 => Some(Component::Value),
            1 => Some(Component::X1),
            2 => Some(Component::X2),
            3 => Some(Component::X3),
            4 => Some(Component::X4),
            _ => None,
        }
    }

    pub fn y(order: usize) -> Option<Component> {
        match order {
            0 => Some(Component::Value),
            1 => Some(Component::Y1),
            2 => Some(Component::Y2),
            _ => None,
        }
    }

    /// Total differentiation order of the slot.
    pub fn order(self) -> usize {
        match self {
            Component::Value => 0,
            Component::T | Component::X1 | Component::Y1 => 1,
            Component::X2 | Component::Y2 | Component::Xy => 2,
            Component::X3 => 3,
            Component::X4 => 4,
        }
    }
}

/// Which derivatives to carry through the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JetRequest {
    pub time: bool,
    pub x_order: usize,
    pub y_order: usize,
    pub mixed_xy: bool,
}

impl JetRequest {
    pub const MAX_X_ORDER: usize = 4;
    pub const MAX_Y_ORDER: usize = 2;

    pub fn value_only() -> Self {
        JetRequest {
            time: false,
            x_order: 0,
            y_order: 0,
            mixed_xy: false,
        }
    }

    /// `u`, `u_t` and `∂ᵏu/∂xᵏ` for `k ≤ order`.
    pub fn space_time_1d(order: usize) -> Self {
        JetRequest {
            time: true,
            x_order: order,
            y_order: 0,
            mixed_xy: false,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.x_order > Self::MAX_X_ORDER {
            return Err(NnError::UnsupportedOrder(self.x_order));
        }
        if self.y_order > Self::MAX_Y_ORDER {
            return Err(NnError::UnsupportedOrder(self.y_order));
        }
        Ok(())
    }

    pub fn max_order(&self) -> usize {
        let mut m = self.x_order.max(self.y_order);
        if self.time {
            m = m.max(1);
        }
        if self.mixed_xy {
            m = m.max(2);
        }
        m
    }

    pub fn contains(&self, c: Component) -> bool {
        match c {
            Component::Value => true,
            Component::T => self.time,
            Component::X1 => self.x_order >= 1,
            Component::X2 => self.x_order >= 2,
            Component::X3 => self.x_order >= 3,
            Component::X4 => self.x_order >= 4,
            Component::Y1 => self.y_order >= 1,
            Component::Y2 => self.y_order >= 2,
            Component::Xy => self.mixed_xy,
        }
    }

    pub fn components(&self) -> impl Iterator<Item = Component> + '_ {
        Component::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    /// Components a forward pass needs to compute the requested ones.
    /// The mixed derivative needs both first-order spatial slots.
    fn closure(mut self) -> Self {
        if self.mixed_xy {
            self.x_order = self.x_order.max(1);
            self.y_order = self.y_order.max(1);
        }
        self
    }
}

/// Tangent vectors, in network-input coordinates, of the physical time and space axes.
///
/// For an input map `input = A·(t, x, y) + c` these are the columns of `A`; the identity
/// map gives the unit vectors. Scaling the tangents applies the chain rule for an affine
/// normalization of the inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTangents {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl InputTangents {
    /// Unit tangents for inputs ordered `(t, x)` or `(t, x, y)`.
    pub fn identity(input_dim: usize) -> Self {
        let unit = |i: usize| {
            let mut v = vec![0.0; input_dim];
            if i < input_dim {
                v[i] = 1.0;
            }
            v
        };
        InputTangents {
            t: unit(0),
            x: unit(1),
            y: unit(2),
        }
    }

    /// Tangents for inputs mapped per coordinate as `input_i = scale_i · coord_i + offset_i`.
    pub fn diagonal(scales: &[f64]) -> Self {
        let mut tangents = Self::identity(scales.len());
        for (v, i) in [&mut tangents.t, &mut tangents.x, &mut tangents.y]
            .into_iter()
            .zip(0..)
        {
            if i < scales.len() {
                v[i] = scales[i];
            }
        }
        tangents
    }
}

/// Batched jet: one `(rows, width)` array per present component.
#[derive(Clone, Debug)]
pub struct JetBatch {
    rows: usize,
    width: usize,
    comps: [Option<Array2<f64>>; N_COMPONENTS],
}

impl JetBatch {
    pub fn empty(rows: usize, width: usize) -> Self {
        JetBatch {
            rows,
            width,
            comps: Default::default(),
        }
    }

    pub fn zeros(rows: usize, width: usize, request: &JetRequest) -> Self {
        let mut b = Self::empty(rows, width);
        for c in request.closure().components() {
            b.comps[c.index()] = Some(Array2::zeros((rows, width)));
        }
        b
    }

    /// Input jet for a batch of network inputs: the value slot holds the inputs
    /// and first-order slots hold the (constant) tangents.
    pub fn seed(inputs: Array2<f64>, request: &JetRequest, tangents: &InputTangents) -> Self {
        let (rows, width) = inputs.dim();
        let request = request.closure();
        let mut b = Self::zeros(rows, width, &request);
        b.comps[Component::Value.index()] = Some(inputs);
        let broadcast = |v: &[f64]| {
            let row = Array1::from_iter((0..width).map(|i| v.get(i).copied().unwrap_or(0.0)));
            row.broadcast((rows, width)).unwrap().to_owned()
        };
        if request.time {
            b.comps[Component::T.index()] = Some(broadcast(&tangents.t));
        }
        if request.x_order >= 1 {
            b.comps[Component::X1.index()] = Some(broadcast(&tangents.x));
        }
        if request.y_order >= 1 {
            b.comps[Component::Y1.index()] = Some(broadcast(&tangents.y));
        }
        b
    }

    /// Value-only jet (plain forward pass).
    pub fn values(inputs: Array2<f64>) -> Self {
        let (rows, width) = inputs.dim();
        let mut b = Self::empty(rows, width);
        b.comps[0] = Some(inputs);
        b
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, c: Component) -> Option<&Array2<f64>> {
        self.comps[c.index()].as_ref()
    }

    pub fn get_mut(&mut self, c: Component) -> Option<&mut Array2<f64>> {
        self.comps[c.index()].as_mut()
    }

    pub fn set(&mut self, c: Component, a: Array2<f64>) {
        assert_eq!(a.dim(), (self.rows, self.width), "component shape");
        self.comps[c.index()] = Some(a);
    }

    pub fn value(&self) -> &Array2<f64> {
        self.comps[0].as_ref().expect("jet always carries values")
    }

    pub fn present(&self) -> impl Iterator<Item = (Component, &Array2<f64>)> {
        Component::ALL
            .into_iter()
            .zip(self.comps.iter())
            .filter_map(|(c, a)| a.as_ref().map(|a| (c, a)))
    }

    fn like_zeros(&self) -> Self {
        let mut b = Self::empty(self.rows, self.width);
        for (c, _) in self.present() {
            b.comps[c.index()] = Some(Array2::zeros((self.rows, self.width)));
        }
        b
    }
}

/// Affine map of every component: `z = a·Wᵀ (+ b on values)`.
pub(crate) fn affine_forward(a: &JetBatch, w: &Array2<f64>, bias: &Array1<f64>) -> JetBatch {
    let out_width = w.nrows();
    let mut z = JetBatch::empty(a.rows, out_width);
    for (c, arr) in a.present() {
        let mut zc = arr.dot(&w.t());
        if c == Component::Value {
            zc += bias;
        }
        z.comps[c.index()] = Some(zc);
    }
    z
}

/// Activation derivative tables σ⁽ᵏ⁾(z) for the value slot of `z`.
pub(crate) fn activation_tables(z: &Array2<f64>, act: Activation, upto: usize) -> Vec<Array2<f64>> {
    let n = upto.min(DERIV_SLOTS - 1) + 1;
    let mut tables: Vec<Array2<f64>> = (0..n).map(|_| Array2::zeros(z.raw_dim())).collect();
    let zs = z.as_slice().expect("standard layout");
    let mut slices: Vec<&mut [f64]> = tables
        .iter_mut()
        .map(|t| t.as_slice_mut().expect("standard layout"))
        .collect();
    for (i, &zi) in zs.iter().enumerate() {
        let d = act.derivatives(zi);
        for (k, s) in slices.iter_mut().enumerate() {
            s[i] = d[k];
        }
    }
    tables
}

fn slot(b: &JetBatch, c: Component) -> Option<&[f64]> {
    b.comps[c.index()].as_ref().map(|a| a.as_slice().expect("standard layout"))
}

/// Pushes the jet `z` through the activation whose derivative tables are `s`.
pub(crate) fn activation_forward(z: &JetBatch, s: &[Array2<f64>]) -> JetBatch {
    let mut a = z.like_zeros();
    let sl = |k: usize| s[k].as_slice().expect("standard layout");
    let n = z.rows * z.width;
    a.comps[0] = Some(s[0].clone());
    let s1 = sl(1);
    let get = |c: Component| slot(z, c);

    if let Some(zt) = get(Component::T) {
        let out = a.comps[Component::T.index()].as_mut().unwrap().as_slice_mut().unwrap();
        for i in 0..n {
            out[i] = s1[i] * zt[i];
        }
    }
    // x-direction chain: univariate Faà di Bruno through order 4
    if let Some(p1) = get(Component::X1) {
        let out = a.comps[Component::X1.index()].as_mut().unwrap().as_slice_mut().unwrap();
        for i in 0..n {
            out[i] = s1[i] * p1[i];
        }
        if let Some(p2) = get(Component::X2) {
            let s2 = sl(2);
            let out = a.comps[Component::X2.index()].as_mut().unwrap().as_slice_mut().unwrap();
            for i in 0..n {
                out[i] = s2[i] * p1[i] * p1[i] + s1[i] * p2[i];
            }
            if let Some(p3) = get(Component::X3) {
                let s3 = sl(3);
                let out = a.comps[Component::X3.index()].as_mut().unwrap().as_slice_mut().unwrap();
                for i in 0..n {
                    let q = p1[i];
                    out[i] = s3[i] * q * q * q + 3.0 * s2[i] * q * p2[i] + s1[i] * p3[i];
                }
                if let Some(p4) = get(Component::X4) {
                    let s4 = sl(4);
                    let out = a.comps[Component::X4.index()].as_mut().unwrap().as_slice_mut().unwrap();
                    for i in 0..n {
                        let q = p1[i];
                        let q2 = q * q;
                        out[i] = s4[i] * q2 * q2
                            + 6.0 * s3[i] * q2 * p2[i]
                            + s2[i] * (3.0 * p2[i] * p2[i] + 4.0 * q * p3[i])
                            + s1[i] * p4[i];
                    }
                }
            }
        }
    }
    if let Some(q1) = get(Component::Y1) {
        let out = a.comps[Component::Y1.index()].as_mut().unwrap().as_slice_mut().unwrap();
        for i in 0..n {
            out[i] = s1[i] * q1[i];
        }
        if let Some(q2) = get(Component::Y2) {
            let s2 = sl(2);
            let out = a.comps[Component::Y2.index()].as_mut().unwrap().as_slice_mut().unwrap();
            for i in 0..n {
                out[i] = s2[i] * q1[i] * q1[i] + s1[i] * q2[i];
            }
        }
    }
    if let (Some(r), Some(p1), Some(q1)) = (get(Component::Xy), get(Component::X1), get(Component::Y1)) {
        let s2 = sl(2);
        let out = a.comps[Component::Xy.index()].as_mut().unwrap().as_slice_mut().unwrap();
        for i in 0..n {
            out[i] = s2[i] * p1[i] * q1[i] + s1[i] * r[i];
        }
    }
    a
}

/// Reverse of [`activation_forward`]: maps adjoints of the activated jet onto adjoints of `z`.
pub(crate) fn activation_backward(da: &JetBatch, z: &JetBatch, s: &[Array2<f64>]) -> JetBatch {
    let mut dz = z.like_zeros();
    let n = z.rows * z.width;
    let sl = |k: usize| s[k].as_slice().expect("standard layout");
    let s1 = sl(1);
    let get = |c: Component| slot(z, c);
    let adj = |c: Component| slot(da, c);

    // accumulate the value adjoint separately to avoid aliasing dz borrows
    let mut dv = vec![0.0; n];
    if let Some(g) = adj(Component::Value) {
        for i in 0..n {
            dv[i] += g[i] * s1[i];
        }
    }

    macro_rules! out {
        ($c:expr) => {
            dz.comps[$c.index()].as_mut().unwrap().as_slice_mut().unwrap()
        };
    }

    if let (Some(g), Some(zt)) = (adj(Component::T), get(Component::T)) {
        let s2 = sl(2);
        let o = out!(Component::T);
        for i in 0..n {
            o[i] += g[i] * s1[i];
            dv[i] += g[i] * s2[i] * zt[i];
        }
    }

    if let Some(p1) = get(Component::X1) {
        let p2 = get(Component::X2);
        let p3 = get(Component::X3);
        let p4 = get(Component::X4);
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        let mut d3 = vec![0.0; n];
        let mut d4 = vec![0.0; n];
        if let Some(g) = adj(Component::X1) {
            let s2 = sl(2);
            for i in 0..n {
                d1[i] += g[i] * s1[i];
                dv[i] += g[i] * s2[i] * p1[i];
            }
        }
        if let (Some(g), Some(p2)) = (adj(Component::X2), p2) {
            let (s2, s3) = (sl(2), sl(3));
            for i in 0..n {
                let q = p1[i];
                d1[i] += g[i] * 2.0 * s2[i] * q;
                d2[i] += g[i] * s1[i];
                dv[i] += g[i] * (s3[i] * q * q + s2[i] * p2[i]);
            }
        }
        if let (Some(g), Some(p2), Some(p3)) = (adj(Component::X3), p2, p3) {
            let (s2, s3, s4) = (sl(2), sl(3), sl(4));
            for i in 0..n {
                let q = p1[i];
                d1[i] += g[i] * (3.0 * s3[i] * q * q + 3.0 * s2[i] * p2[i]);
                d2[i] += g[i] * 3.0 * s2[i] * q;
                d3[i] += g[i] * s1[i];
                dv[i] += g[i] * (s4[i] * q * q * q + 3.0 * s3[i] * q * p2[i] + s2[i] * p3[i]);
            }
        }
        if let (Some(g), Some(p2), Some(p3), Some(p4)) = (adj(Component::X4), p2, p3, p4) {
            let (s2, s3, s4, s5) = (sl(2), sl(3), sl(4), sl(5));
            for i in 0..n {
                let q = p1[i];
                let q2 = q * q;
                d1[i] += g[i] * (4.0 * s4[i] * q2 * q + 12.0 * s3[i] * q * p2[i] + 4.0 * s2[i] * p3[i]);
                d2[i] += g[i] * (6.0 * s3[i] * q2 + 6.0 * s2[i] * p2[i]);
                d3[i] += g[i] * 4.0 * s2[i] * q;
                d4[i] += g[i] * s1[i];
                dv[i] += g[i]
                    * (s5[i] * q2 * q2
                        + 6.0 * s4[i] * q2 * p2[i]
                        + s3[i] * (3.0 * p2[i] * p2[i] + 4.0 * q * p3[i])
                        + s2[i] * p4[i]);
            }
        }
        // mixed term contributes to the x1 adjoint as well
        if let (Some(g), Some(q1), Some(r)) = (adj(Component::Xy), get(Component::Y1), get(Component::Xy)) {
            let (s2, s3) = (sl(2), sl(3));
            let o = out!(Component::Xy);
            for i in 0..n {
                d1[i] += g[i] * s2[i] * q1[i];
                o[i] += g[i] * s1[i];
                dv[i] += g[i] * (s3[i] * p1[i] * q1[i] + s2[i] * r[i]);
            }
        }
        for (c, d) in [
            (Component::X1, d1),
            (Component::X2, d2),
            (Component::X3, d3),
            (Component::X4, d4),
        ] {
            if let Some(o) = dz.comps[c.index()].as_mut() {
                let o = o.as_slice_mut().unwrap();
                for i in 0..n {
                    o[i] += d[i];
                }
            }
        }
    }

    if let Some(q1) = get(Component::Y1) {
        let mut e1 = vec![0.0; n];
        let mut e2 = vec![0.0; n];
        if let Some(g) = adj(Component::Y1) {
            let s2 = sl(2);
            for i in 0..n {
                e1[i] += g[i] * s1[i];
                dv[i] += g[i] * s2[i] * q1[i];
            }
        }
        if let (Some(g), Some(q2)) = (adj(Component::Y2), get(Component::Y2)) {
            let (s2, s3) = (sl(2), sl(3));
            for i in 0..n {
                let q = q1[i];
                e1[i] += g[i] * 2.0 * s2[i] * q;
                e2[i] += g[i] * s1[i];
                dv[i] += g[i] * (s3[i] * q * q + s2[i] * q2[i]);
            }
        }
        if let (Some(g), Some(p1)) = (adj(Component::Xy), get(Component::X1)) {
            let s2 = sl(2);
            for i in 0..n {
                e1[i] += g[i] * s2[i] * p1[i];
            }
        }
        for (c, d) in [(Component::Y1, e1), (Component::Y2, e2)] {
            if let Some(o) = dz.comps[c.index()].as_mut() {
                let o = o.as_slice_mut().unwrap();
                for i in 0..n {
                    o[i] += d[i];
                }
            }
        }
    }

    let o = out!(Component::Value);
    o.copy_from_slice(&dv);
    dz
}

/// Reverse of [`affine_forward`]: returns `(dW, db, d_input)`.
pub(crate) fn affine_backward(
    dz: &JetBatch,
    a: &JetBatch,
    w: &Array2<f64>,
    need_input: bool,
) -> (Array2<f64>, Array1<f64>, Option<JetBatch>) {
    let mut dw = Array2::zeros(w.raw_dim());
    let mut db = Array1::zeros(w.nrows());
    let mut da = need_input.then(|| JetBatch::empty(a.rows, a.width));
    for (c, g) in dz.present() {
        let Some(ac) = a.get(c) else { continue };
        dw += &g.t().dot(ac);
        if c == Component::Value {
            db += &g.sum_axis(Axis(0));
        }
        if let Some(da) = da.as_mut() {
            da.comps[c.index()] = Some(g.dot(w));
        }
    }
    (dw, db, da)
}
