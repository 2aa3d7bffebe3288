//! Simulate a virtual patient, fit the bidirectional transition model, and
//! ask it both questions: what a dose does next, and which dose explains an
//! observed outcome. Run with `cargo run --example quickstart`.

use glucora::causal::{plan_structure, topo_layering};
use glucora::cinn::{
    eval_mse, load_cinn, save_cinn, train_cinn, CinnConfig, CinnModel, FrozenCinn, Normalization,
    TrainConfig,
};
use glucora::glucosim::{gen_dataset, DosePolicy, Environment, ToyEnv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // transitions from the six-variable linear patient under a dithered policy
    let mut env = ToyEnv::new();
    let mut policy = DosePolicy::toy(0)?;
    let data = gen_dataset(&mut env, &mut policy, 12, 7);
    println!("dataset: {} transitions", data.rows.len());

    // the block layout is compiled from the environment's causal graph
    let dag = env.causal_graph();
    let plan = plan_structure(&dag, &topo_layering(&dag)?)?;
    let mut model = CinnModel::new(plan, CinnConfig::default(), 11);
    model.norm = Normalization::fit(&data);

    let cfg = TrainConfig { epochs: 40, ..TrainConfig::default() };
    let curves = train_cinn(&mut model, &data, &[], &cfg)?;
    let (frow, brow) = curves.final_row();
    println!("after {} epochs: forward mse {:.2e}, backward mse {:.2e}", cfg.epochs, frow[0], brow[0]);

    // one reading predicts, the other explains, through the same weights
    let frozen = FrozenCinn::new(model.clone())?;
    let row = &data.rows[0];
    let pred = frozen.forward(&row.s, &row.a)?;
    let explained = frozen.counterfactual(&row.s, &pred)?;
    let gap = (explained[0] - row.a[0]).hypot(explained[1] - row.a[1]);
    println!("dosed {:?}, recovered {explained:?} ({gap:.2e} apart)", row.a);

    // checkpoints restore the weights bit for bit
    let path = std::env::temp_dir().join("glucora-quickstart.json");
    save_cinn(&model, &path)?;
    let reloaded = load_cinn(&path)?;
    assert_eq!(model.store.value_hash(), reloaded.store.value_hash());
    let before = eval_mse(&model, &data)?;
    let after = eval_mse(&reloaded, &data)?;
    assert_eq!(before, after);
    println!("reloaded checkpoint evaluates identically: {:.4e} / {:.4e}", after.0, after.1);
    std::fs::remove_file(&path)?;
    Ok(())
}
