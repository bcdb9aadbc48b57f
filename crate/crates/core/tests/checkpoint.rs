use proptest::prelude::*;
use smattn_core::checkpoint::Checkpoint;
use smattn_core::data::Vocabulary;
use smattn_core::model::{HeadMode, Model, ModelConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn round_trip_is_bit_exact(
        n in 2usize..15,
        half_e in 1usize..4,
        half_pe in 1usize..4,
        d in 1usize..9,
        blocks in 1usize..3,
        bias in any::<bool>(),
        grouped in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = ModelConfig {
            n_items: n,
            d_e: 2 * half_e,
            d_pe: 2 * half_pe,
            d,
            blocks,
            qkv_bias: bias,
            heads: if grouped { HeadMode::GroupWise } else { HeadMode::ItemWise },
            ..ModelConfig::default()
        };
        let groups: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let model = Model::new(cfg, Some(&groups), seed).unwrap();
        let mut ck = Checkpoint::new(model, seed, serde_json::json!({"note": "x"}));
        ck.vocabulary = Some(Vocabulary::new((0..n).map(|i| format!("item{i}")).collect()).unwrap());
        let mut buf = Vec::new();
        ck.to_writer(&mut buf).unwrap();
        let back = Checkpoint::from_reader(buf.as_slice()).unwrap();
        for (name, v) in ck.model.params.iter() {
            let w = back.model.params.get(name).unwrap();
            prop_assert_eq!(v.shape(), w.shape());
            prop_assert!(v.values().iter().zip(w.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        prop_assert_eq!(back, ck);
    }
}

#[test]
fn corrupted_shapes_rejected() {
    let cfg = ModelConfig {
        n_items: 4,
        d_e: 2,
        d_pe: 2,
        d: 3,
        ..ModelConfig::default()
    };
    let ck = Checkpoint::new(Model::new(cfg, None, 1).unwrap(), 1, serde_json::Value::Null);
    let mut value = serde_json::to_value(&ck).unwrap();
    value["model"]["config"]["n_items"] = serde_json::json!(5);
    let text = serde_json::to_vec(&value).unwrap();
    assert!(Checkpoint::from_reader(text.as_slice()).is_err());
}
