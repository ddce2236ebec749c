use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use super::{GradientBundle, Layout, QNetworkParams, FEATURES};
use crate::episode::{AgentState, FrameIndex};
use crate::error::{Error, Result};

/// One supervised item: the network output for `action` in `state` is
/// regressed onto `target`.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub state: &'a AgentState,
    pub action: FrameIndex,
    pub target: f64,
}

fn view2(values: &[f64], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &values[off..off + rows * cols])
        .expect("layout slices match their shapes")
}

fn view1(values: &[f64], off: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&values[off..off + len])
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_finite(a: &Array2<f64>, layer: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer })
    }
}

/// Rows are time-major: row `t * B + b` holds frame `t` of sequence `b`.
struct Trace {
    n: usize,
    batch: usize,
    x: Array2<f64>,
    emb: Array2<f64>,
    /// Activated gates `[i, f, g, o]`, cell states and hidden states for the
    /// forward (0) and backward (1) scans.
    gates: [Array2<f64>; 2],
    cells: [Array2<f64>; 2],
    hidden: [Array2<f64>; 2],
    hcat: Array2<f64>,
    a1: Array2<f64>,
    q: Vec<f64>,
}

impl Trace {
    fn q_at(&self, t: usize, b: usize) -> f64 {
        self.q[t * self.batch + b]
    }
}

fn scan_order(n: usize, dir: usize) -> Vec<usize> {
    if dir == 0 {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    }
}

fn features(params: &QNetworkParams, states: &[&AgentState]) -> Array2<f64> {
    let cfg = params.config();
    let n = states[0].n_frames();
    let b = states.len();
    let mut x = Array2::zeros((n * b, FEATURES));
    for (bi, s) in states.iter().enumerate() {
        let q = s.quality.as_slice();
        let h = s.history.as_slice();
        for t in 0..n {
            let row = t * b + bi;
            if cfg.use_quality {
                x[[row, 0]] = q[t];
            }
            if cfg.use_history {
                x[[row, 1]] = f64::from(h[t]) / cfg.history_scale;
            }
        }
    }
    x
}

fn run_forward(params: &QNetworkParams, states: &[&AgentState]) -> Result<Trace> {
    let l: Layout = params.layout();
    let v = params.values();
    let (e, h, m) = (l.embed, l.hidden, l.head);
    let n = states[0].n_frames();
    let b = states.len();
    let tb = n * b;

    let x = features(params, states);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { layer: "input" });
    }
    let mut emb = Array2::zeros((tb, e));
    general_mat_mul(1.0, &x, &view2(v, l.embed_w, e, FEATURES).t(), 0.0, &mut emb);
    emb += &view1(v, l.embed_b, e);

    let mut gates_out: [Array2<f64>; 2] = [Array2::zeros((0, 0)), Array2::zeros((0, 0))];
    let mut cells_out = gates_out.clone();
    let mut hidden_out = gates_out.clone();
    for dir in 0..2 {
        let lp = l.lstm[dir];
        let w_hh = view2(v, lp.w_hh, 4 * h, h);
        let mut gates = Array2::zeros((tb, 4 * h));
        general_mat_mul(1.0, &emb, &view2(v, lp.w_ih, 4 * h, e).t(), 0.0, &mut gates);
        gates += &view1(v, lp.b, 4 * h);
        let mut cells = Array2::<f64>::zeros((tb, h));
        let mut hidden = Array2::<f64>::zeros((tb, h));

        let mut prev: Option<usize> = None;
        for t in scan_order(n, dir) {
            let rows = t * b..(t + 1) * b;
            if let Some(p) = prev {
                general_mat_mul(
                    1.0,
                    &hidden.slice(s![p * b..(p + 1) * b, ..]),
                    &w_hh.t(),
                    1.0,
                    &mut gates.slice_mut(s![rows.clone(), ..]),
                );
            }
            let g = gates.as_slice_mut().expect("standard layout");
            let c = cells.as_slice_mut().expect("standard layout");
            let hs = hidden.as_slice_mut().expect("standard layout");
            for bi in 0..b {
                let r = t * b + bi;
                let gr = &mut g[r * 4 * h..(r + 1) * 4 * h];
                for j in 0..h {
                    let i_g = sigmoid(gr[j]);
                    let f_g = sigmoid(gr[h + j]);
                    let c_g = gr[2 * h + j].tanh();
                    let o_g = sigmoid(gr[3 * h + j]);
                    gr[j] = i_g;
                    gr[h + j] = f_g;
                    gr[2 * h + j] = c_g;
                    gr[3 * h + j] = o_g;
                    let c_prev = prev.map_or(0.0, |p| c[(p * b + bi) * h + j]);
                    let c_new = f_g * c_prev + i_g * c_g;
                    c[r * h + j] = c_new;
                    hs[r * h + j] = o_g * c_new.tanh();
                }
            }
            prev = Some(t);
        }
        check_finite(&hidden, if dir == 0 { "forward lstm" } else { "backward lstm" })?;
        gates_out[dir] = gates;
        cells_out[dir] = cells;
        hidden_out[dir] = hidden;
    }

    let hcat = ndarray::concatenate(Axis(1), &[hidden_out[0].view(), hidden_out[1].view()])
        .expect("matching row counts");
    let mut a1 = Array2::zeros((tb, m));
    general_mat_mul(1.0, &hcat, &view2(v, l.head_w1, m, 2 * h).t(), 0.0, &mut a1);
    a1 += &view1(v, l.head_b1, m);
    a1.mapv_inplace(f64::tanh);
    let w2 = view1(v, l.head_w2, m);
    let b2 = v[l.head_b2];
    let q: Vec<f64> = a1.outer_iter().map(|row| row.dot(&w2) + b2).collect();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { layer: "head" });
    }

    Ok(Trace {
        n,
        batch: b,
        x,
        emb,
        gates: gates_out,
        cells: cells_out,
        hidden: hidden_out,
        hcat,
        a1,
        q,
    })
}

/// Accumulates into `grad` the gradient of `Σ_b dq[b] · Q_b[actions[b]]`.
fn run_backward(
    params: &QNetworkParams,
    trace: &Trace,
    actions: &[usize],
    dq: &[f64],
    grad: &mut [f64],
) {
    let l = params.layout();
    let v = params.values();
    let (e, h, m) = (l.embed, l.hidden, l.head);
    let (n, b) = (trace.n, trace.batch);
    let tb = n * b;

    // Head: only the selected frame of each sequence carries gradient.
    let w1 = view2(v, l.head_w1, m, 2 * h);
    let w2 = &v[l.head_w2..l.head_w2 + m];
    let mut dhcat = Array2::<f64>::zeros((tb, 2 * h));
    let mut dz1 = vec![0.0; m];
    for (bi, (&a, &d)) in actions.iter().zip(dq).enumerate() {
        let r = a * b + bi;
        let a1 = trace.a1.row(r);
        let hc = trace.hcat.row(r);
        grad[l.head_b2] += d;
        for j in 0..m {
            grad[l.head_w2 + j] += d * a1[j];
            dz1[j] = d * w2[j] * (1.0 - a1[j] * a1[j]);
            grad[l.head_b1 + j] += dz1[j];
            let gw = &mut grad[l.head_w1 + j * 2 * h..l.head_w1 + (j + 1) * 2 * h];
            for (g, x) in gw.iter_mut().zip(hc.iter()) {
                *g += dz1[j] * x;
            }
        }
        let mut dh = dhcat.row_mut(r);
        for j in 0..m {
            dh.scaled_add(dz1[j], &w1.row(j));
        }
    }

    let mut demb = Array2::<f64>::zeros((tb, e));
    for dir in 0..2 {
        let lp = l.lstm[dir];
        let w_hh = view2(v, lp.w_hh, 4 * h, h);
        let w_ih = view2(v, lp.w_ih, 4 * h, e);
        let gates = trace.gates[dir].as_slice().expect("standard layout");
        let cells = trace.cells[dir].as_slice().expect("standard layout");
        let dh_out = dhcat.slice(s![.., dir * h..(dir + 1) * h]);
        let mut dgates = Array2::<f64>::zeros((tb, 4 * h));
        let mut h_prev = Array2::<f64>::zeros((tb, h));
        let mut dh_next = Array2::<f64>::zeros((b, h));
        let mut dc_next = vec![0.0; b * h];

        let order = scan_order(n, dir);
        for (k, &t) in order.iter().enumerate().rev() {
            let prev = k.checked_sub(1).map(|k| order[k]);
            if let Some(p) = prev {
                h_prev
                    .slice_mut(s![t * b..(t + 1) * b, ..])
                    .assign(&trace.hidden[dir].slice(s![p * b..(p + 1) * b, ..]));
            }
            {
                let dg = dgates.as_slice_mut().expect("standard layout");
                for bi in 0..b {
                    let r = t * b + bi;
                    let gr = &gates[r * 4 * h..(r + 1) * 4 * h];
                    let dgr = &mut dg[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let (i_g, f_g, c_g, o_g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                        let dh = dh_out[[r, j]] + dh_next[[bi, j]];
                        let tc = cells[r * h + j].tanh();
                        let dc = dc_next[bi * h + j] + dh * o_g * (1.0 - tc * tc);
                        let c_prev = prev.map_or(0.0, |p| cells[(p * b + bi) * h + j]);
                        dgr[j] = dc * c_g * i_g * (1.0 - i_g);
                        dgr[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                        dgr[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                        dgr[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                        dc_next[bi * h + j] = dc * f_g;
                    }
                }
            }
            general_mat_mul(
                1.0,
                &dgates.slice(s![t * b..(t + 1) * b, ..]),
                &w_hh,
                0.0,
                &mut dh_next,
            );
        }

        let mut gw_ih = Array2::<f64>::zeros((4 * h, e));
        general_mat_mul(1.0, &dgates.t(), &trace.emb, 0.0, &mut gw_ih);
        let mut gw_hh = Array2::<f64>::zeros((4 * h, h));
        general_mat_mul(1.0, &dgates.t(), &h_prev, 0.0, &mut gw_hh);
        add_into(&mut grad[lp.w_ih..lp.w_ih + 4 * h * e], &gw_ih);
        add_into(&mut grad[lp.w_hh..lp.w_hh + 4 * h * h], &gw_hh);
        for (g, s) in grad[lp.b..lp.b + 4 * h]
            .iter_mut()
            .zip(dgates.sum_axis(Axis(0)).iter())
        {
            *g += s;
        }
        general_mat_mul(1.0, &dgates, &w_ih, 1.0, &mut demb);
    }

    let mut gw_e = Array2::<f64>::zeros((e, FEATURES));
    general_mat_mul(1.0, &demb.t(), &trace.x, 0.0, &mut gw_e);
    add_into(&mut grad[l.embed_w..l.embed_w + e * FEATURES], &gw_e);
    for (g, s) in grad[l.embed_b..l.embed_b + e]
        .iter_mut()
        .zip(demb.sum_axis(Axis(0)).iter())
    {
        *g += s;
    }
}

fn add_into(dst: &mut [f64], src: &Array2<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// Q-value of every frame of `state`.
pub fn forward(params: &QNetworkParams, state: &AgentState) -> Result<Vec<f64>> {
    if state.n_frames() == 0 {
        return Err(Error::Dimension("state has no frames".into()));
    }
    Ok(run_forward(params, &[state])?.q)
}

/// Q-values for several states; sequences of equal length share one pass.
pub fn forward_batch(params: &QNetworkParams, states: &[&AgentState]) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); states.len()];
    for (n, idx) in group_by_len(states.iter().map(|s| s.n_frames())) {
        if n == 0 {
            return Err(Error::Dimension("state has no frames".into()));
        }
        let group: Vec<&AgentState> = idx.iter().map(|&i| states[i]).collect();
        let trace = run_forward(params, &group)?;
        for (bi, &i) in idx.iter().enumerate() {
            out[i] = (0..n).map(|t| trace.q_at(t, bi)).collect();
        }
    }
    Ok(out)
}

fn group_by_len(lens: impl Iterator<Item = usize>) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, n) in lens.enumerate() {
        groups.entry(n).or_default().push(i);
    }
    groups
}

/// Squared error of one selected Q-value and its exact gradient.
pub fn loss_and_grad(
    params: &QNetworkParams,
    state: &AgentState,
    action: FrameIndex,
    target: f64,
) -> Result<(f64, GradientBundle)> {
    batch_loss_and_grad(
        params,
        &[Sample {
            state,
            action,
            target,
        }],
    )
}

/// Mean squared error over `samples` and its exact gradient.
pub fn batch_loss_and_grad(
    params: &QNetworkParams,
    samples: &[Sample<'_>],
) -> Result<(f64, GradientBundle)> {
    if samples.is_empty() {
        return Err(Error::Dimension("empty batch".into()));
    }
    for s in samples {
        FrameIndex::checked(s.action.0, s.state.n_frames())?;
    }
    let total = samples.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (_, idx) in group_by_len(samples.iter().map(|s| s.state.n_frames())) {
        let states: Vec<&AgentState> = idx.iter().map(|&i| samples[i].state).collect();
        let trace = run_forward(params, &states)?;
        let actions: Vec<usize> = idx.iter().map(|&i| samples[i].action.0).collect();
        let dq: Vec<f64> = idx
            .iter()
            .zip(&actions)
            .enumerate()
            .map(|(bi, (&i, &a))| {
                let err = trace.q_at(a, bi) - samples[i].target;
                loss += err * err / total;
                2.0 * err / total
            })
            .collect();
        run_backward(params, &trace, &actions, &dq, &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric { layer: "loss" });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric { layer: "gradient" });
    }
    Ok((loss, GradientBundle::from_values(grad)))
}
