use super::*;
use crate::autodiff::{Graph, Tensor, WeightSet};

fn identity_teacher(ops: &[CandidateOp], dim: usize) -> (TeacherSpec, WeightSet) {
    let spec = TeacherSpec {
        input_dim: dim,
        hidden_dim: dim,
        num_classes: dim,
        topology: CellTopology::new(1),
        cells: 1,
        ops: ops.to_vec(),
    };
    let mut w = WeightSet::new();
    w.push("stem.w", Tensor::identity(dim)).unwrap();
    w.push("stem.b", Tensor::zeros(&[dim])).unwrap();
    for &op in ops {
        if op.has_weights() {
            w.push(format!("cell0.edge0.{op}.w"), Tensor::identity(dim)).unwrap();
            w.push(format!("cell0.edge0.{op}.b"), Tensor::zeros(&[dim])).unwrap();
        }
    }
    w.push("head.w", Tensor::identity(dim)).unwrap();
    w.push("head.b", Tensor::zeros(&[dim])).unwrap();
    (spec, w)
}

#[test]
fn equal_scalars_over_identity_and_zero_halve_the_input() {
    use CandidateOp::*;
    let (spec, w) = identity_teacher(&[Identity, Zero], 3);
    let arch = ArchParams::uniform(&spec.ops, spec.topology, 1).unwrap();
    let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 4.0, 0.5, 0.0, 8.0]).unwrap();
    let out = teacher_logits(&spec, TensorMixing::Soft(&arch), &w, &x).unwrap();
    for (o, i) in out.data().iter().zip(x.data()) {
        assert!((o - 0.5 * i).abs() < 1e-15);
    }
}

#[test]
fn saturated_zero_scalar_silences_the_edge() {
    use CandidateOp::*;
    let (spec, w) = identity_teacher(&[Identity, Zero], 3);
    let arch = ArchParams::from_scalars(&spec.ops, spec.topology, 1, vec![0.0, 40.0]).unwrap();
    let x = Tensor::matrix(1, 3, vec![1.0, -2.0, 4.0]).unwrap();
    let out = teacher_logits(&spec, TensorMixing::Soft(&arch), &w, &x).unwrap();
    assert!(out.data().iter().all(|v| v.abs() < 1e-12));
}

fn seeded_spec() -> TeacherSpec {
    TeacherSpec {
        input_dim: 2,
        hidden_dim: 3,
        num_classes: 3,
        topology: CellTopology::new(2),
        cells: 2,
        ops: CandidateOp::ALL.to_vec(),
    }
}

fn seeded_arch(spec: &TeacherSpec) -> ArchParams {
    let n = spec.topology.num_edges() * spec.ops.len();
    let flat: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.7).sin()).collect();
    ArchParams::from_scalars(&spec.ops, spec.topology, spec.cells, flat).unwrap()
}

fn seeded_input() -> Tensor {
    Tensor::matrix(3, 2, vec![0.3, -1.1, 1.4, 0.2, -0.6, 0.9]).unwrap()
}

#[test]
fn mixture_consistency_at_saturation() {
    let spec = seeded_spec();
    let w = init_teacher_weights(&spec, 0).unwrap();
    let x = seeded_input();
    for (p, &op) in spec.ops.iter().enumerate() {
        if op == CandidateOp::Zero {
            continue;
        }
        let mut flat = vec![0.0; spec.topology.num_edges() * spec.ops.len()];
        for e in 0..spec.topology.num_edges() {
            flat[e * spec.ops.len() + p] = 40.0;
        }
        let arch = ArchParams::from_scalars(&spec.ops, spec.topology, spec.cells, flat).unwrap();
        let soft = teacher_logits(&spec, TensorMixing::Soft(&arch), &w, &x).unwrap();
        let genotype = Genotype::uniform_op(spec.topology, spec.cells, op);
        let hard = teacher_logits(&spec, TensorMixing::Hard(&genotype), &w, &x).unwrap();
        for (a, b) in soft.data().iter().zip(hard.data()) {
            assert!((a - b).abs() < 1e-10, "{op}: {a} vs {b}");
        }
    }
}

// Straight-line evaluation of the supernet with plain Vec arithmetic.
fn reference_teacher(spec: &TeacherSpec, arch: &ArchParams, w: &WeightSet, x: &Tensor) -> Vec<Vec<f64>> {
    let lin = |name: &str, v: &[f64]| -> Vec<f64> {
        let wt = w.get(&format!("{name}.w")).unwrap();
        let b = w.get(&format!("{name}.b")).unwrap();
        let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
        (0..cols)
            .map(|j| (0..rows).map(|i| v[i] * wt.get(i, j)).sum::<f64>() + b.data()[j])
            .collect()
    };
    let mix: Vec<Vec<f64>> = (0..arch.num_edges())
        .map(|e| {
            let row: Vec<f64> = arch.rows()[e].clone();
            let z: f64 = row.iter().map(|s| s.exp()).sum();
            row.iter().map(|s| s.exp() / z).collect()
        })
        .collect();
    (0..x.rows())
        .map(|r| {
            let mut h = lin("stem", x.row(r));
            for c in 0..spec.cells {
                let mut states = vec![h.clone()];
                let mut e = 0;
                for _ in 0..spec.topology.nodes {
                    let mut node = vec![0.0; spec.hidden_dim];
                    for s in 0..states.len() {
                        for (p, op) in spec.ops.iter().enumerate() {
                            let out: Vec<f64> = match op {
                                CandidateOp::Zero => vec![0.0; spec.hidden_dim],
                                CandidateOp::Identity => states[s].clone(),
                                CandidateOp::Linear => lin(&format!("cell{c}.edge{e}.linear"), &states[s]),
                                CandidateOp::LinearTanh => lin(&format!("cell{c}.edge{e}.linear_tanh"), &states[s])
                                    .iter()
                                    .map(|v| v.tanh())
                                    .collect(),
                                CandidateOp::LinearRelu => lin(&format!("cell{c}.edge{e}.linear_relu"), &states[s])
                                    .iter()
                                    .map(|v| v.max(0.0))
                                    .collect(),
                            };
                            for k in 0..spec.hidden_dim {
                                node[k] += mix[e][p] * out[k];
                            }
                        }
                        e += 1;
                    }
                    states.push(node);
                }
                h = states.pop().unwrap();
            }
            lin("head", &h)
        })
        .collect()
}

#[test]
fn seeded_teacher_matches_straight_line_mixture() {
    let spec = seeded_spec();
    let arch = seeded_arch(&spec);
    let w = init_teacher_weights(&spec, 0).unwrap();
    let x = seeded_input();
    let got = teacher_logits(&spec, TensorMixing::Soft(&arch), &w, &x).unwrap();
    let expected = reference_teacher(&spec, &arch, &w, &x);
    for r in 0..x.rows() {
        for k in 0..spec.num_classes {
            assert!((got.get(r, k) - expected[r][k]).abs() < 1e-12);
        }
    }
}

#[test]
fn arch_gradient_matches_central_differences() {
    let spec = seeded_spec();
    let arch = seeded_arch(&spec);
    let w = init_teacher_weights(&spec, 0).unwrap();
    let x = seeded_input();
    let target = crate::autodiff::one_hot(&[0, 2, 1], 3).unwrap();
    let loss_at = |flat: &[f64]| -> f64 {
        let a = arch.with_flat(flat).unwrap();
        let logits = teacher_logits(&spec, TensorMixing::Soft(&a), &w, &x).unwrap();
        crate::autodiff::soft_cross_entropy(&crate::autodiff::softmax_rows(&logits), &target).unwrap()
    };
    let mut g = Graph::new();
    let a = g.param("arch", arch.scalars().clone()).unwrap();
    let bound = w.bind_constant(&mut g);
    let xv = g.constant(x.clone());
    let logits = teacher_forward(&mut g, &spec, Mixing::Soft(a), &bound, xv).unwrap();
    let p = g.softmax(logits).unwrap();
    let t = g.constant(target.clone());
    let loss = g.soft_cross_entropy(p, t).unwrap();
    let grad = g.gradient(loss, &["arch"]).unwrap();

    let h = 1e-5;
    let mut flat = arch.flat().to_vec();
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + h;
        let up = loss_at(&flat);
        flat[i] = orig - h;
        let down = loss_at(&flat);
        flat[i] = orig;
        let fd = (up - down) / (2.0 * h);
        if grad[i].abs() > 1e-8 {
            assert!((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()) <= 1e-5, "{i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn zero_student_gives_uniform_softmax() {
    let spec = StudentSpec::small(2, 3);
    let w = init_student_weights(&spec, 0).unwrap();
    let zeros = w.with_flat(&vec![0.0; w.num_scalars()]).unwrap();
    let x = seeded_input();
    let logits = student_logits(&spec, &zeros, &x).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
    let p = crate::autodiff::softmax_rows(&logits);
    assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn identity_student_reproduces_one_hot() {
    let spec = StudentSpec::new(3, &[], Activation::Identity, 3, Capacity::Small);
    let mut w = WeightSet::new();
    w.push("layer0.w", Tensor::identity(3)).unwrap();
    w.push("layer0.b", Tensor::zeros(&[3])).unwrap();
    let x = crate::autodiff::one_hot(&[1], 3).unwrap();
    assert_eq!(student_logits(&spec, &w, &x).unwrap().data(), x.data());
}

#[test]
fn seeded_student_matches_straight_line_arithmetic() {
    let spec = StudentSpec::new(2, &[4], Activation::Tanh, 3, Capacity::Small);
    let w = init_student_weights(&spec, 0).unwrap();
    let x = seeded_input();
    let got = student_logits(&spec, &w, &x).unwrap();
    let (w0, b0) = (w.get("layer0.w").unwrap(), w.get("layer0.b").unwrap());
    let (w1, b1) = (w.get("layer1.w").unwrap(), w.get("layer1.b").unwrap());
    for r in 0..x.rows() {
        let hidden: Vec<f64> = (0..4)
            .map(|j| (x.get(r, 0) * w0.get(0, j) + x.get(r, 1) * w0.get(1, j) + b0.data()[j]).tanh())
            .collect();
        for k in 0..3 {
            let o: f64 = (0..4).map(|j| hidden[j] * w1.get(j, k)).sum::<f64>() + b1.data()[k];
            assert!((got.get(r, k) - o).abs() < 1e-14);
        }
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let spec = seeded_spec();
    let a = init_teacher_weights(&spec, 7).unwrap();
    assert_eq!(a, init_teacher_weights(&spec, 7).unwrap());
    let s = StudentSpec::large(2, 3);
    assert_eq!(init_student_weights(&s, 3).unwrap(), init_student_weights(&s, 3).unwrap());
}

#[test]
fn different_seeds_differ_almost_everywhere() {
    let spec = seeded_spec();
    let a = init_teacher_weights(&spec, 0).unwrap().flatten();
    let b = init_teacher_weights(&spec, 1).unwrap().flatten();
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    assert!(differing as f64 >= 0.99 * a.len() as f64);
}

#[test]
fn init_arch_is_uniform() {
    let spec = TeacherSpec::new(2, 4, 3);
    let arch = spec.init_arch().unwrap();
    assert_eq!(arch.len(), 10 * 5);
    let mix = arch.mixing_weights();
    for e in 0..arch.num_edges() {
        let row = mix.row(e);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }
}

#[test]
fn discrete_weights_cover_only_selected_ops() {
    let spec = seeded_spec();
    let genotype = Genotype::uniform_op(spec.topology, 2, CandidateOp::LinearTanh);
    let w = init_discrete_weights(&spec, &genotype, 0).unwrap();
    assert!(w.names().all(|n| !n.contains(".linear.") && !n.contains("linear_relu")));
    let x = seeded_input();
    let out = teacher_logits(&spec, TensorMixing::Hard(&genotype), &w, &x).unwrap();
    assert_eq!(out.shape(), &[3, 3]);
}

#[test]
fn missing_weights_and_bad_shapes_are_errors() {
    let spec = seeded_spec();
    let arch = seeded_arch(&spec);
    let empty = WeightSet::new();
    assert!(teacher_logits(&spec, TensorMixing::Soft(&arch), &empty, &seeded_input()).is_err());
    let w = init_teacher_weights(&spec, 0).unwrap();
    let wide = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
    assert!(matches!(
        teacher_logits(&spec, TensorMixing::Soft(&arch), &w, &wide),
        Err(ModelError::Autodiff(_))
    ));
}
