mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use vrt_eval::reward::{GtRef, RewardRequest, batch_rewards, reward_for_request};
use vrt_eval::{
    BinaryMask, Category, GroupRewards, RewardScope, encode_rle, matching_iou_reward,
    parse_model_output, reward_variance_filter, total_reward,
};

fn refs(v: &[BinaryMask]) -> Vec<&BinaryMask> {
    v.iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn reward_bounded_and_order_invariant(seed in any::<u64>(), np in 0usize..6, ng in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pred: Vec<BinaryMask> = (0..np).map(|_| random_rect(&mut rng, 12, 12)).collect();
        let mut gt: Vec<BinaryMask> = (0..ng).map(|_| random_rect(&mut rng, 12, 12)).collect();
        let base = matching_iou_reward(&refs(&pred), &refs(&gt), 0.1).unwrap();
        prop_assert!(base.value <= 1.0);
        prop_assert!(base.value >= -0.1 * base.unmatched as f64 - 1e-12);
        pred.shuffle(&mut rng);
        gt.shuffle(&mut rng);
        let again = matching_iou_reward(&refs(&pred), &refs(&gt), 0.1).unwrap();
        prop_assert_eq!(base.value.to_bits(), again.value.to_bits());
    }

    #[test]
    fn spurious_prediction_costs_lambda(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // predictions and gt confined to the left half, spurious mask on the right
        let gt: Vec<BinaryMask> = (0..n).map(|_| random_rect(&mut rng, 12, 6)).collect();
        let pred: Vec<BinaryMask> = (0..n).map(|_| random_rect(&mut rng, 12, 6)).collect();
        let widen = |m: &BinaryMask| BinaryMask::from_fn(12, 12, |r, c| c < 6 && m.get(r, c)).unwrap();
        let gt: Vec<_> = gt.iter().map(widen).collect();
        let mut pred: Vec<_> = pred.iter().map(widen).collect();
        let before = matching_iou_reward(&refs(&pred), &refs(&gt), 0.1).unwrap().value;
        pred.push(rect(12, 12, 0, 6, 11, 11));
        let after = matching_iou_reward(&refs(&pred), &refs(&gt), 0.1).unwrap().value;
        prop_assert!((after - (before - 0.1)).abs() < 1e-12);
    }
}

#[test]
fn reward_is_one_only_for_exact_sets() {
    let a = rect(12, 12, 0, 0, 3, 3);
    let b = rect(12, 12, 5, 5, 9, 9);
    assert_eq!(
        matching_iou_reward(&[&a, &b], &[&b, &a], 0.1)
            .unwrap()
            .value,
        1.0
    );
    assert!(matching_iou_reward(&[&a], &[&a, &b], 0.1).unwrap().value < 1.0);
    assert!(
        matching_iou_reward(&[&a, &b, &b], &[&a, &b], 0.1)
            .unwrap()
            .value
            < 1.0
    );
}

#[test]
fn total_reward_examples() {
    let s = square_sample("r", 2, [Category::Func].into());
    let gt_ans = s.answer[0].mask.clone();

    let ok = parse_model_output(
        "<think>a [SEG] b [SEG]</think><answer>c [SEG]</answer>",
        s.trace_masks().cloned().chain([gt_ans.clone()]).collect(),
    )
    .unwrap();
    let r = total_reward(&ok, &s, 0.1, RewardScope::AnswerOnly).unwrap();
    assert_eq!(
        (r.format_think, r.format_seg, r.iou_reward, r.total),
        (1, 1, 1.0, 3.0)
    );
    let joint = total_reward(&ok, &s, 0.1, RewardScope::Joint).unwrap();
    assert_eq!(joint.total, 3.0);

    let broken = parse_model_output("I don't know", vec![]).unwrap();
    let r = total_reward(&broken, &s, 0.1, RewardScope::AnswerOnly).unwrap();
    assert_eq!((r.format_think, r.format_seg), (0, 0));
    assert_eq!(r.iou_reward, -0.1 * s.answer.len() as f64);
    let r = total_reward(&broken, &s, 0.1, RewardScope::Joint).unwrap();
    assert_eq!(r.iou_reward, -0.1 * s.joint_masks().len() as f64);
    assert_eq!(
        r.total,
        r.format_think as f64 + r.format_seg as f64 + r.iou_reward
    );
}

#[test]
fn total_reward_sums_components() {
    // answer mask covers 6 of the 10 gt answer pixels -> IoU 0.6
    let mut s = square_sample("r", 1, [Category::Func].into());
    let gt = rect(H, W, 0, 0, 0, 9);
    s.answer[0].mask = gt;
    let pred = rect(H, W, 0, 0, 0, 5);
    let p = parse_model_output("<think>x</think><answer>[SEG]</answer>", vec![pred]).unwrap();
    let r = total_reward(&p, &s, 0.1, RewardScope::AnswerOnly).unwrap();
    assert_eq!(r.iou_reward, 0.6);
    assert_eq!(r.total, 2.6);
}

#[test]
fn seg_only_in_thinking_scores_zero() {
    let s = square_sample("r", 1, [Category::Func].into());
    let p = parse_model_output(
        "<think>a [SEG]</think><answer>the thing</answer>",
        vec![s.trace[0].mask.clone()],
    )
    .unwrap();
    let r = total_reward(&p, &s, 0.1, RewardScope::AnswerOnly).unwrap();
    assert_eq!((r.format_think, r.format_seg), (1, 0));
}

#[test]
fn requests_resolve_inline_and_by_id() {
    let b = small_benchmark(3);
    let s = &b.samples[0];
    let text = "<think>x</think><answer>[SEG]</answer>".to_string();
    let masks = vec![encode_rle(&s.answer[0].mask)];
    let by_id = RewardRequest {
        id: "q1".into(),
        raw_text: text.clone(),
        masks: masks.clone(),
        gt: GtRef::Id(s.id.clone()),
    };
    let inline = RewardRequest {
        id: "q2".into(),
        raw_text: text,
        masks,
        gt: GtRef::Inline(Box::new(s.to_record())),
    };
    let a = reward_for_request(&by_id, Some(&b), 0.1, RewardScope::AnswerOnly).unwrap();
    let c = reward_for_request(&inline, None, 0.1, RewardScope::AnswerOnly).unwrap();
    assert_eq!(a, c);
    assert_eq!(a.total, 3.0);
    assert!(reward_for_request(&by_id, None, 0.1, RewardScope::AnswerOnly).is_err());

    let out = batch_rewards(
        &[by_id.clone(), inline, by_id],
        Some(&b),
        0.1,
        RewardScope::AnswerOnly,
        4,
    );
    assert_eq!(
        out.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
        ["q1", "q2", "q1"]
    );
    let json = serde_json::to_value(&out[0]).unwrap();
    assert_eq!(json["total"], 3.0);
    assert_eq!(json["format_think"], 1);
    assert!(json.get("error").is_none());

    let parsed: RewardRequest = serde_json::from_str(&format!(
        r#"{{"id":"q","raw_text":"","masks":[],"gt":"{}"}}"#,
        s.id
    ))
    .unwrap();
    assert_eq!(parsed.gt, GtRef::Id(s.id.clone()));
}

#[test]
fn variance_filter_is_deterministic_subset() {
    let groups: Vec<GroupRewards> = (0..20)
        .map(|i| GroupRewards {
            id: format!("g{i:02}"),
            rewards: (0..4).map(|j| ((i * 7 + j * 3) % 5) as f64 / 4.0).collect(),
        })
        .collect();
    let a = reward_variance_filter(&groups, 7);
    assert_eq!(a, reward_variance_filter(&groups, 7));
    assert_eq!(a.len(), 7);
    assert!(a.iter().all(|id| groups.iter().any(|g| &g.id == id)));
    let stds: Vec<f64> = a
        .iter()
        .map(|id| groups.iter().find(|g| &g.id == id).unwrap().std_dev())
        .collect();
    assert!(stds.windows(2).all(|w| w[0] >= w[1]));
}
