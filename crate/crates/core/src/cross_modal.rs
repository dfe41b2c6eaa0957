//! Modal-shared / modal-unique decomposition, its orthogonality penalty and
//! the fused cross-modal features.

use rand::Rng;

use crate::encoders::uniform;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionParams {
    /// `d_s × d`
    pub w_shared: Tensor,
    /// `d_u × d`
    pub p_i: Tensor,
    /// `d_u × d`
    pub p_t: Tensor,
}

/// Random `rows × cols` matrix with orthonormal rows (Gram–Schmidt).
/// Requires `rows <= cols`.
fn row_orthonormal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    assert!(rows <= cols, "cannot fit {rows} orthonormal rows in R^{cols}");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Tensor::matrix(rows, cols, basis.concat()).expect("shape")
}

impl DecompositionParams {
    /// `W_shared` gets orthonormal rows when `d_s <= d`; the unique
    /// projections are scaled uniform.
    pub fn init(rng: &mut impl Rng, d: usize, d_s: usize, d_u: usize) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let w_shared = if d_s <= d {
            row_orthonormal(rng, d_s, d)
        } else {
            uniform(rng, &[d_s, d], bound)
        };
        Self {
            w_shared,
            p_i: uniform(rng, &[d_u, d], bound),
            p_t: uniform(rng, &[d_u, d], bound),
        }
    }

    pub fn bind(&self, tape: &mut Tape, grad: bool) -> DecompositionVars {
        DecompositionVars {
            w_shared: tape.leaf(self.w_shared.clone(), grad),
            p_i: tape.leaf(self.p_i.clone(), grad),
            p_t: tape.leaf(self.p_t.clone(), grad),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecompositionVars {
    pub w_shared: Var,
    pub p_i: Var,
    pub p_t: Var,
}

/// Shared and unique components of both modalities.
#[derive(Clone, Copy, Debug)]
pub struct Decomposed {
    pub i_s: Var,
    pub i_u: Var,
    pub t_s: Var,
    pub t_u: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionFeatures {
    /// `[T_u; T_u - I_u; I_u]`
    pub f_unique: Var,
    /// `[T_s; T_s ⊙ I_s; I_s]`
    pub f_share: Var,
}

pub fn decompose(tape: &mut Tape, h_i: Var, h_t: Var, vars: &DecompositionVars) -> Result<Decomposed> {
    let d = tape.value(vars.w_shared).cols();
    for h in [h_i, h_t] {
        let got = tape.value(h).len();
        if tape.value(h).rank() != 1 || got != d {
            return Err(Error::Dimension {
                what: "encoded modality",
                expected: d,
                got,
            });
        }
    }
    Ok(Decomposed {
        i_s: tape.matmul(vars.w_shared, h_i)?,
        i_u: tape.matmul(vars.p_i, h_i)?,
        t_s: tape.matmul(vars.w_shared, h_t)?,
        t_u: tape.matmul(vars.p_t, h_t)?,
    })
}

/// `‖W_shared P_Iᵀ‖²_F + ‖W_shared P_Tᵀ‖²_F`
pub fn orthogonal_loss(tape: &mut Tape, vars: &DecompositionVars) -> Result<Var> {
    let pit = tape.transpose(vars.p_i)?;
    let ptt = tape.transpose(vars.p_t)?;
    let a = tape.matmul(vars.w_shared, pit)?;
    let b = tape.matmul(vars.w_shared, ptt)?;
    let la = tape.frobenius_sq(a);
    let lb = tape.frobenius_sq(b);
    Ok(tape.add(la, lb)?)
}

pub fn fuse(tape: &mut Tape, parts: &Decomposed) -> Result<FusionFeatures> {
    let diff = tape.sub(parts.t_u, parts.i_u)?;
    let f_unique = tape.concat(&[parts.t_u, diff, parts.i_u], 0)?;
    let prod = tape.hadamard(parts.t_s, parts.i_s)?;
    let f_share = tape.concat(&[parts.t_s, prod, parts.i_s], 0)?;
    Ok(FusionFeatures { f_unique, f_share })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        uniform(rng, &[r, c], 1.0)
    }

    fn naive_matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                *o += m.data()[i * m.cols() + j] * vj;
            }
        }
        out
    }

    /// Σ_ij (W Pᵀ)_ij² by explicit triple loop.
    fn naive_ortho(w: &Tensor, p: &Tensor) -> f64 {
        let mut total = 0.0;
        for i in 0..w.rows() {
            for j in 0..p.rows() {
                let mut acc = 0.0;
                for k in 0..w.cols() {
                    acc += w.data()[i * w.cols() + k] * p.data()[j * p.cols() + k];
                }
                total += acc * acc;
            }
        }
        total
    }

    fn decomp(tape: &mut Tape, p: &DecompositionParams, hi: &[f64], ht: &[f64]) -> Decomposed {
        let vars = p.bind(tape, false);
        let hi = tape.constant(Tensor::vector(hi.to_vec()));
        let ht = tape.constant(Tensor::vector(ht.to_vec()));
        decompose(tape, hi, ht, &vars).unwrap()
    }

    #[test]
    fn zero_shared_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = DecompositionParams::init(&mut rng, 4, 3, 2);
        p.w_shared = Tensor::zeros(&[3, 4]);
        let mut tape = Tape::new();
        let d = decomp(&mut tape, &p, &[1.0, 2.0, 3.0, 4.0], &[0.5; 4]);
        assert!(tape.value(d.i_s).data().iter().all(|&x| x == 0.0));
        assert!(tape.value(d.t_s).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn equal_inputs_share_projection_and_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = DecompositionParams::init(&mut rng, 6, 4, 5);
        let h = [0.3, 0.0, 1.2, 0.7, 0.1, 2.0];
        let mut tape = Tape::new();
        let d = decomp(&mut tape, &p, &h, &h);
        assert_eq!(tape.value(d.i_s), tape.value(d.t_s));

        let hi = [0.9, 0.2, 0.0, 1.1, 0.4, 0.6];
        let d = decomp(&mut tape, &p, &hi, &h);
        assert_eq!(tape.value(d.i_s).data(), naive_matvec(&p.w_shared, &hi).as_slice());
        assert_eq!(tape.value(d.i_u).data(), naive_matvec(&p.p_i, &hi).as_slice());
        assert_eq!(tape.value(d.t_s).data(), naive_matvec(&p.w_shared, &h).as_slice());
        assert_eq!(tape.value(d.t_u).data(), naive_matvec(&p.p_t, &h).as_slice());
        assert_eq!(tape.value(d.t_u).len(), 5);

        let vars = p.bind(&mut tape, false);
        let short = tape.constant(Tensor::vector(vec![1.0; 5]));
        assert!(matches!(
            decompose(&mut tape, short, short, &vars),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn init_shared_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = DecompositionParams::init(&mut rng, 64, 50, 50);
        let w = &p.w_shared;
        for i in 0..50 {
            for j in 0..50 {
                let dot: f64 = w.row(i).iter().zip(w.row(j)).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }

    fn ortho_value(p: &DecompositionParams) -> f64 {
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let l = orthogonal_loss(&mut tape, &vars).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn orthogonal_loss_cases() {
        // W on e1..e2, P on e3..e4
        let mut w = Tensor::zeros(&[2, 4]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[5] = 1.0;
        let mut p = Tensor::zeros(&[2, 4]);
        p.data_mut()[2] = 1.0;
        p.data_mut()[7] = 1.0;
        let params = DecompositionParams {
            w_shared: w,
            p_i: p.clone(),
            p_t: p,
        };
        assert_eq!(ortho_value(&params), 0.0);

        let d = 5;
        let eye = DecompositionParams {
            w_shared: Tensor::identity(d),
            p_i: Tensor::identity(d),
            p_t: Tensor::identity(d),
        };
        assert_eq!(ortho_value(&eye), 2.0 * d as f64);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = DecompositionParams {
            w_shared: rand_matrix(&mut rng, 3, 6),
            p_i: rand_matrix(&mut rng, 4, 6),
            p_t: rand_matrix(&mut rng, 4, 6),
        };
        let oracle = naive_ortho(&r.w_shared, &r.p_i) + naive_ortho(&r.w_shared, &r.p_t);
        assert!((ortho_value(&r) - oracle).abs() < 1e-12 * oracle.max(1.0));
        assert!(ortho_value(&r) >= 0.0);
    }

    #[test]
    fn orthogonal_loss_gradient_closed_form_and_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DecompositionParams {
            w_shared: rand_matrix(&mut rng, 3, 5),
            p_i: rand_matrix(&mut rng, 2, 5),
            p_t: rand_matrix(&mut rng, 2, 5),
        };
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, true);
        let l = orthogonal_loss(&mut tape, &vars).unwrap();
        let grads = tape.backward(l).unwrap();
        let gw = grads.get(vars.w_shared).unwrap();

        // 2 (W P_Iᵀ) P_I + 2 (W P_Tᵀ) P_T
        let (w, pi, pt) = (&p.w_shared, &p.p_i, &p.p_t);
        for i in 0..3 {
            for k in 0..5 {
                let mut expect = 0.0;
                for proj in [pi, pt] {
                    for j in 0..proj.rows() {
                        let wp: f64 = (0..5).map(|m| w.data()[i * 5 + m] * proj.data()[j * 5 + m]).sum();
                        expect += 2.0 * wp * proj.data()[j * 5 + k];
                    }
                }
                assert!((gw.data()[i * 5 + k] - expect).abs() < 1e-12);
            }
        }

        let check = finite_diff_check::<_, Error>(
            |tape, v| {
                orthogonal_loss(
                    tape,
                    &DecompositionVars {
                        w_shared: v[0],
                        p_i: v[1],
                        p_t: v[2],
                    },
                )
            },
            &[p.w_shared.clone(), p.p_i.clone(), p.p_t.clone()],
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error <= 1e-4);
    }

    fn fused(i_s: &[f64], i_u: &[f64], t_s: &[f64], t_u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let mut c = |v: &[f64]| tape.constant(Tensor::vector(v.to_vec()));
        let parts = Decomposed {
            i_s: c(i_s),
            i_u: c(i_u),
            t_s: c(t_s),
            t_u: c(t_u),
        };
        let f = fuse(&mut tape, &parts).unwrap();
        (
            tape.value(f.f_unique).data().to_vec(),
            tape.value(f.f_share).data().to_vec(),
        )
    }

    #[test]
    fn fusion_blocks() {
        let (u, s) = fused(&[1.0, 2.0, 3.0], &[0.5, -1.0], &[1.0, 1.0, 1.0], &[0.5, -1.0]);
        assert_eq!(u.len(), 6);
        assert_eq!(s.len(), 9);
        assert_eq!(&u[2..4], &[0.0, 0.0]);
        assert_eq!(&s[3..6], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn swapping_modalities_negates_difference_block() {
        let a = [0.3, -1.2];
        let b = [2.0, 0.7];
        let s = [1.0, 1.0, 1.0];
        let (u1, _) = fused(&s, &a, &s, &b);
        let (u2, _) = fused(&s, &b, &s, &a);
        for k in 0..2 {
            assert_eq!(u1[2 + k], -u2[2 + k]);
        }
    }
}
