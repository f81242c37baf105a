use super::*;
use crate::nn::gradcheck::{check_params, DEFAULT_STEP};

fn random_matrix(seed: u64, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut init = SeededInit::new(seed);
    Matrix::from_vec(rows, cols, init.uniform(&[rows * cols], -scale, scale).value).unwrap()
}

#[test]
fn zero_head_gives_neutral_outputs() {
    let emb = random_matrix(1, 3, 512, 1.0);
    let va = FcHead::zeros(OutputKind::VaSigned, 512).forward(&emb).unwrap();
    assert_eq!(va[0], TaskPrediction::Va { valence: 0.0, arousal: 0.0 });
    let au = FcHead::zeros(OutputKind::Au, 512).forward(&emb).unwrap();
    match &au[2] {
        TaskPrediction::Au { probs } => assert!(probs.len() == 12 && probs.iter().all(|&p| p == 0.5)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn expression_logits_equal_manual_dot_products() {
    let mut init = SeededInit::new(2);
    let head = FcHead::new(OutputKind::Expr, 512, &mut init);
    let emb = random_matrix(3, 2, 512, 1.0);
    let out = head.forward(&emb).unwrap();
    for (r, pred) in out.iter().enumerate() {
        let TaskPrediction::Expr { logits } = pred else { panic!() };
        assert_eq!(logits.len(), 8);
        for (k, &l) in logits.iter().enumerate() {
            let mut acc = head.linear.bias.value[k];
            for j in 0..512 {
                acc += head.linear.weight.value[k * 512 + j] * emb.at(r, j);
            }
            assert!((l - acc).abs() < 1e-6);
        }
    }
}

#[test]
fn output_arity_and_ranges() {
    let mut init = SeededInit::new(4);
    let emb = random_matrix(5, 16, 512, 10.0);
    for (kind, width) in [(OutputKind::VaSigned, 2), (OutputKind::Expr, 8), (OutputKind::Au, 12)] {
        let head = FcHead::new(kind, 512, &mut init);
        for p in head.forward(&emb).unwrap() {
            match p {
                TaskPrediction::Va { valence, arousal } => {
                    assert_eq!(width, 2);
                    assert!(valence.abs() <= 1.0 && arousal.abs() <= 1.0);
                }
                TaskPrediction::Expr { logits } => assert!(logits.len() == width && logits.iter().all(|v| v.is_finite())),
                TaskPrediction::Au { probs } => {
                    assert!(probs.len() == width && probs.iter().all(|p| (0.0..=1.0).contains(p)))
                }
                TaskPrediction::Embedding { .. } => unreachable!(),
            }
        }
    }
    assert_eq!(OutputKind::for_task(Task::Va, (0.0, 1.0)), OutputKind::VaUnit);
    assert_eq!(OutputKind::for_task(Task::Va, (-1.0, 1.0)), OutputKind::VaSigned);
}

#[test]
fn wrong_embedding_width_is_rejected() {
    let head = FcHead::zeros(OutputKind::Au, 512);
    assert!(head.forward(&random_matrix(1, 1, 256, 1.0)).is_err());
}

#[test]
fn fc_head_gradients() {
    let mut init = SeededInit::new(6);
    let emb = random_matrix(7, 3, 10, 1.0);
    let proj = random_matrix(8, 3, 12, 1.0);
    let mut head = FcHead::new(OutputKind::Au, 10, &mut init);
    let report = check_params(
        &mut head,
        DEFAULT_STEP,
        1000,
        &|h: &FcHead| {
            let z = h.logits(&emb).unwrap();
            z.data.iter().zip(&proj.data).map(|(&a, b)| h.kind.activate(a) * b).sum()
        },
        &mut |h: &mut FcHead| {
            let z = h.logits(&emb).unwrap();
            let mut dz = proj.clone();
            for (g, &zv) in dz.data.iter_mut().zip(&z.data) {
                *g *= h.kind.derivative(zv);
            }
            h.backward(&emb, &dz);
        },
    );
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn single_frame_window_is_one_cell_step_from_zero_state() {
    let mut init = SeededInit::new(9);
    let head = LstmHead::new(OutputKind::Expr, 6, 5, &mut init);
    let frames = random_matrix(10, 4, 6, 1.0);
    for t in 0..4 {
        let seq = EmbeddingSequence::single(&Matrix::from_vec(1, 6, frames.row(t).to_vec()).unwrap()).unwrap();
        let trace = &head.forward_train(&seq).unwrap()[0];
        let step = head.cell.step(frames.row(t), &[0.0; 5], &[0.0; 5]);
        let mut z = [0.0; 8];
        head.out.forward_vec(&step.h, &mut z);
        assert_eq!(trace.logits.row(0), &z);
    }
}

#[test]
fn frame_order_changes_outputs() {
    let mut init = SeededInit::new(11);
    let head = LstmHead::new(OutputKind::VaSigned, 6, 5, &mut init);
    let frames = random_matrix(12, 5, 6, 1.0);
    let rows = frames.to_rows();
    let mut perm = rows.clone();
    perm.swap(0, 3);
    let a = head.run(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
    let b = head.run(&perm.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
    // frame 4 saw the same input but a different history
    assert!(a.logits.row(4) != b.logits.row(4));
}

#[test]
fn zero_length_is_a_contract_violation() {
    assert!(EmbeddingSequence::new(1, 3, 2, vec![0.0; 6], vec![0]).is_err());
    assert!(EmbeddingSequence::new(1, 0, 2, vec![], vec![0]).is_err());
    let mut init = SeededInit::new(1);
    let head = LstmHead::new(OutputKind::Au, 2, 3, &mut init);
    assert!(head.run(&[]).is_err());
}

#[test]
fn padded_frames_are_ignored() {
    let mut init = SeededInit::new(13);
    let head = LstmHead::new(OutputKind::Au, 3, 4, &mut init);
    let mut data = random_matrix(14, 2, 3, 1.0).data;
    data.extend([99.0; 6]);
    data.extend(random_matrix(15, 4, 3, 1.0).data);
    let seq = EmbeddingSequence::new(2, 4, 3, data, vec![2, 4]).unwrap();
    let out = head.forward(&seq).unwrap();
    assert_eq!(out[0].len(), 2);
    assert_eq!(out[1].len(), 4);
}

#[test]
fn lstm_gradients_through_time() {
    let mut init = SeededInit::new(16);
    let mut head = LstmHead::new(OutputKind::Expr, 5, 4, &mut init);
    let frames = random_matrix(17, 3, 5, 1.0);
    let proj = random_matrix(18, 3, 8, 1.0);
    let rows = frames.to_rows();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let report = check_params(
        &mut head,
        DEFAULT_STEP,
        1000,
        &|h: &LstmHead| {
            let tr = h.run(&refs).unwrap();
            tr.logits.data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
        },
        &mut |h: &mut LstmHead| {
            let tr = h.run(&refs).unwrap();
            h.backward(&tr, &proj, false);
        },
    );
    assert!(report.max_rel_error < 1e-4, "{report:?}");

    let tr = head.run(&refs).unwrap();
    let dx = head.backward(&tr, &proj, true).unwrap();
    let num = crate::nn::gradcheck::numeric_gradient(&frames.data, DEFAULT_STEP, &|v| {
        let rows: Vec<&[f64]> = v.chunks(5).collect();
        let tr = head.run(&rows).unwrap();
        tr.logits.data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
    });
    assert!(crate::nn::gradcheck::max_relative_error(&dx.data, &num) < 1e-4);
}

#[test]
fn repeated_frame_outputs_settle() {
    // small recurrent weights make the state map a contraction
    let mut init = SeededInit::new(19);
    let mut head = LstmHead::new(OutputKind::VaSigned, 8, 6, &mut init);
    head.cell.w_hh.value.iter_mut().for_each(|w| *w *= 0.3);
    let frame = random_matrix(20, 1, 8, 1.0);
    let frames: Vec<&[f64]> = (0..60).map(|_| frame.row(0)).collect();
    let tr = head.run(&frames).unwrap();
    let diffs: Vec<f64> = (1..60)
        .map(|t| {
            tr.logits
                .row(t)
                .iter()
                .zip(tr.logits.row(t - 1))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let burn_in = 5;
    for w in diffs[burn_in..].windows(2) {
        assert!(w[1] <= w[0] + 1e-15, "{diffs:?}");
    }
    assert!(diffs[58] < diffs[burn_in] * 1e-3);
}
