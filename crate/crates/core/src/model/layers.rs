//! Tape-level building blocks: point projection, bidirectional LSTM and
//! attention pooling.

use crate::autodiff::{Axis, Tape, Var};
use crate::error::{Error, Result};

/// `[n × 1]` column of point values → `[n × d]` via `x·Wᵀ + b`, or the
/// column itself when no projection is configured.
pub fn project_points(tape: &mut Tape, points: Var, proj: Option<(Var, Var)>) -> Result<Var> {
    match proj {
        None => Ok(points),
        Some((w, b)) => {
            let wt = tape.transpose(w)?;
            let z = tape.matmul(points, wt)?;
            tape.add_row(z, b)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmCellVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Runs one direction over the rows of `seq`, returning `[1 × h]` hidden
/// states indexed by position.
fn lstm_direction(tape: &mut Tape, seq: Var, cell: LstmCellVars, reverse: bool) -> Result<Vec<Var>> {
    let n = tape.shape(seq)[0];
    let gates_w = tape.shape(cell.w_ih)[0];
    if !gates_w.is_multiple_of(4) || tape.shape(cell.w_hh) != [gates_w, gates_w / 4] {
        return Err(Error::dim("lstm", tape.shape(cell.w_ih), tape.shape(cell.w_hh)));
    }
    let h = gates_w / 4;
    let w_ih_t = tape.transpose(cell.w_ih)?;
    let w_hh_t = tape.transpose(cell.w_hh)?;
    let xw = tape.matmul(seq, w_ih_t)?;
    let xg = tape.add_row(xw, cell.bias)?;

    let mut out = vec![None; n];
    let mut state: Option<(Var, Var)> = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let mut g = tape.slice_rows(xg, t, 1)?;
        if let Some((h_prev, _)) = state {
            let rec = tape.matmul(h_prev, w_hh_t)?;
            g = tape.add(g, rec)?;
        }
        let gi = tape.slice_cols(g, 0, h)?;
        let gf = tape.slice_cols(g, h, h)?;
        let gg = tape.slice_cols(g, 2 * h, h)?;
        let go = tape.slice_cols(g, 3 * h, h)?;
        let i = tape.sigmoid(gi);
        let cand = tape.tanh(gg);
        let o = tape.sigmoid(go);
        let mut c = tape.mul(i, cand)?;
        if let Some((_, c_prev)) = state {
            let f = tape.sigmoid(gf);
            let keep = tape.mul(f, c_prev)?;
            c = tape.add(c, keep)?;
        }
        let squashed = tape.tanh(c);
        let h_t = tape.mul(o, squashed)?;
        out[t] = Some(h_t);
        state = Some((h_t, c));
    }
    Ok(out.into_iter().map(|v| v.expect("every position visited")).collect())
}

/// Bidirectional LSTM with zero initial state: `[n × d_in]` → `[n × 2h]`,
/// row `t` being `[h_fwd(t) ∥ h_bwd(t)]`.
pub fn bilstm(tape: &mut Tape, seq: Var, fwd: LstmCellVars, bwd: LstmCellVars) -> Result<Var> {
    if tape.shape(seq).len() != 2 || tape.shape(seq)[0] == 0 {
        return Err(Error::DegenerateInput("bilstm needs a non-empty 2-D sequence".into()));
    }
    let f = lstm_direction(tape, seq, fwd, false)?;
    let b = lstm_direction(tape, seq, bwd, true)?;
    let hf = tape.concat(&f, Axis::Rows)?;
    let hb = tape.concat(&b, Axis::Rows)?;
    tape.concat(&[hf, hb], Axis::Cols)
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub weight: Var,
    pub bias: Var,
    pub context: Var,
}

pub struct Pooled {
    /// `[1 × d]`
    pub pooled: Var,
    /// `[1 × n]`
    pub weights: Var,
}

/// Scores rows of `h` by `tanh(W·h + b)ᵀ·q`, normalizes them with a
/// masked softmax and returns the weighted sum of the rows.
pub fn attention_pool(tape: &mut Tape, h: Var, attn: AttentionVars, mask: Option<&[bool]>) -> Result<Pooled> {
    let n = tape.shape(h)[0];
    let a = tape.shape(attn.context).iter().product::<usize>();
    let wt = tape.transpose(attn.weight)?;
    let z = tape.matmul(h, wt)?;
    let z = tape.add_row(z, attn.bias)?;
    let q = tape.tanh(z);
    let ctx = tape.reshape(attn.context, &[a, 1])?;
    let scores = tape.matmul(q, ctx)?;
    let alpha = tape.softmax(scores, mask)?;
    let weights = tape.reshape(alpha, &[1, n])?;
    let pooled = tape.matmul(weights, h)?;
    Ok(Pooled { pooled, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(tape: &mut Tape, shape: &[usize], rng: &mut ChaCha8Rng) -> Var {
        let n = shape.iter().product();
        tape.variable(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn cell(tape: &mut Tape, d_in: usize, h: usize, rng: &mut ChaCha8Rng) -> LstmCellVars {
        LstmCellVars {
            w_ih: random(tape, &[4 * h, d_in], rng),
            w_hh: random(tape, &[4 * h, h], rng),
            bias: random(tape, &[4 * h], rng),
        }
    }

    #[test]
    fn projection_cases() {
        let mut t = Tape::new();
        let x = t.constant(&[3, 1], vec![1.0, -2.0, 0.5]).unwrap();
        let w = t.variable(&[4, 1], vec![0.0; 4]).unwrap();
        let b = t.variable(&[4], vec![0.0; 4]).unwrap();
        let p = project_points(&mut t, x, Some((w, b))).unwrap();
        assert_eq!(t.shape(p), &[3, 4]);
        assert!(t.value(p).iter().all(|&v| v == 0.0));
        let same = project_points(&mut t, x, None).unwrap();
        assert_eq!(same, x);
        assert_eq!(t.shape(same), &[3, 1]);
    }

    #[test]
    fn zero_lstm_is_fixed_point() {
        let mut t = Tape::new();
        let x = t
            .constant(
                &[6, 2],
                vec![3.0, -1.0, 0.2, 5.0, 1.0, 1.0, 0.0, 2.0, -4.0, 0.5, 1.5, 2.5],
            )
            .unwrap();
        let zero = |t: &mut Tape| LstmCellVars {
            w_ih: t.variable(&[12, 2], vec![0.0; 24]).unwrap(),
            w_hh: t.variable(&[12, 3], vec![0.0; 36]).unwrap(),
            bias: t.variable(&[12], vec![0.0; 12]).unwrap(),
        };
        let (f, b) = (zero(&mut t), zero(&mut t));
        let out = bilstm(&mut t, x, f, b).unwrap();
        assert_eq!(t.shape(out), &[6, 6]);
        assert!(t.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::new();
        let (n, d, h) = (7, 3, 4);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rev: Vec<f64> = (0..n).rev().flat_map(|i| data[i * d..(i + 1) * d].to_vec()).collect();
        let fwd = cell(&mut t, d, h, &mut rng);
        let bwd = cell(&mut t, d, h, &mut rng);
        let x = t.constant(&[n, d], data).unwrap();
        let xr = t.constant(&[n, d], rev).unwrap();
        let out = bilstm(&mut t, x, fwd, bwd).unwrap();
        // swapping the cells on the reversed input reproduces the output reversed
        let out_r = bilstm(&mut t, xr, bwd, fwd).unwrap();
        let (a, b) = (t.value(out), t.value(out_r));
        for i in 0..n {
            let j = n - 1 - i;
            for k in 0..h {
                assert!((a[i * 2 * h + k] - b[j * 2 * h + h + k]).abs() < 1e-14);
                assert!((a[i * 2 * h + h + k] - b[j * 2 * h + k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_step_matches_cell_equations() {
        // scalar cell: gates i, f, g, o with w_ih = [0.5, -0.3, 0.8, 0.1], bias = [0.1, 0.2, -0.1, 0.3]
        let x = 0.7_f64;
        let w = [0.5, -0.3, 0.8, 0.1];
        let bias = [0.1, 0.2, -0.1, 0.3];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(w[0] * x + bias[0]);
        let g = (w[2] * x + bias[2]).tanh();
        let o = sig(w[3] * x + bias[3]);
        let c = i * g; // f · c0 vanishes with c0 = 0
        let expected = o * c.tanh();

        let mut t = Tape::new();
        let cellv = |t: &mut Tape| LstmCellVars {
            w_ih: t.variable(&[4, 1], w.to_vec()).unwrap(),
            w_hh: t.variable(&[4, 1], vec![0.9, -0.4, 0.2, 0.6]).unwrap(),
            bias: t.variable(&[4], bias.to_vec()).unwrap(),
        };
        let (f, b) = (cellv(&mut t), cellv(&mut t));
        let xs = t.constant(&[1, 1], vec![x]).unwrap();
        let out = bilstm(&mut t, xs, f, b).unwrap();
        assert!((t.value(out)[0] - expected).abs() < 1e-12);
        assert!((t.value(out)[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn attention_symmetry_and_single_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = Tape::new();
        let attn = AttentionVars {
            weight: random(&mut t, &[3, 2], &mut rng),
            bias: random(&mut t, &[3], &mut rng),
            context: random(&mut t, &[3], &mut rng),
        };
        let h = t.constant(&[2, 2], vec![0.3, -0.7, 0.3, -0.7]).unwrap();
        let p = attention_pool(&mut t, h, attn, None).unwrap();
        assert_eq!(t.value(p.weights), &[0.5, 0.5]);
        assert!((t.value(p.pooled)[0] - 0.3).abs() < 1e-15);
        assert!((t.value(p.pooled)[1] + 0.7).abs() < 1e-15);

        let one = t.constant(&[1, 2], vec![1.5, 2.5]).unwrap();
        let p = attention_pool(&mut t, one, attn, None).unwrap();
        assert_eq!(t.value(p.weights), &[1.0]);
        assert_eq!(t.value(p.pooled), &[1.5, 2.5]);
    }

    #[test]
    fn attention_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, d, a) = (5, 4, 6);
        let w: Vec<f64> = (0..a * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..a).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..a).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();

        // independent scalar-loop evaluation
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                (0..a)
                    .map(|k| {
                        let z: f64 = (0..d).map(|j| w[k * d + j] * h[i * d + j]).sum::<f64>() + b[k];
                        z.tanh() * q[k]
                    })
                    .sum()
            })
            .collect();
        let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let z: f64 = exps.iter().sum();
        let alpha: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let pooled: Vec<f64> = (0..d).map(|j| (0..n).map(|i| alpha[i] * h[i * d + j]).sum()).collect();

        let mut t = Tape::new();
        let attn = AttentionVars {
            weight: t.variable(&[a, d], w).unwrap(),
            bias: t.variable(&[a], b).unwrap(),
            context: t.variable(&[a], q).unwrap(),
        };
        let hv = t.constant(&[n, d], h).unwrap();
        let p = attention_pool(&mut t, hv, attn, None).unwrap();
        for (x, y) in t.value(p.weights).iter().zip(&alpha) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in t.value(p.pooled).iter().zip(&pooled) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_fully_masked_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let attn = AttentionVars {
            weight: random(&mut t, &[2, 2], &mut rng),
            bias: random(&mut t, &[2], &mut rng),
            context: random(&mut t, &[2], &mut rng),
        };
        let h = random(&mut t, &[3, 2], &mut rng);
        assert!(matches!(
            attention_pool(&mut t, h, attn, Some(&[false, false, false])),
            Err(Error::DegenerateMask(_))
        ));
        let p = attention_pool(&mut t, h, attn, Some(&[true, false, true])).unwrap();
        assert_eq!(t.value(p.weights)[1], 0.0);
    }
}
