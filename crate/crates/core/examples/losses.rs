// Every loss on one small score batch, plus the SL/BSL identity at equal
// temperatures.

use bslrec::config::GroupReduction;
use bslrec::losses::{
    bce_loss, bpr_loss, bsl_loss_canonical, bsl_loss_pseudocode, mse_loss, singleton_groups, softmax_loss,
    softmax_loss_no_variance, ScoreBatch,
};

pub fn run_example() -> bslrec::Result<()> {
    let batch = ScoreBatch::new(
        vec![0.8, 0.3],
        vec![vec![0.1, -0.2, 0.5], vec![0.4, 0.0, -0.6]],
    )?;

    println!("bpr            {:.6}", bpr_loss(&batch).value);
    println!("bce (c=1)      {:.6}", bce_loss(&batch, 1.0)?.value);
    println!("mse (c=1)      {:.6}", mse_loss(&batch, 1.0)?.value);
    let sl = softmax_loss(&batch, 0.1)?;
    println!("sl (tau=0.1)   {:.6}", sl.value);
    println!("sl no variance {:.6}", softmax_loss_no_variance(&batch, 0.1)?.value);
    let pseudo = bsl_loss_pseudocode(&batch, 0.1, 0.1)?;
    println!("bsl pseudocode {:.6}", pseudo.value);
    let canon = bsl_loss_canonical(&batch, &singleton_groups(2), 0.2, 0.1, GroupReduction::MeanOverGroups)?;
    println!("bsl canonical  {:.6}", canon.value);

    // With tau_pos = tau_neg the pseudocode form is SL divided by tau.
    assert!((pseudo.value - sl.value / 0.1).abs() < 1e-9);

    // Negative gradients of SL are the softmax of negative scores, scaled by 1/B.
    for row in &sl.grad_neg {
        let mass: f64 = row.iter().sum();
        assert!((mass - 0.5).abs() < 1e-12);
    }
    println!("hardest negative of row 0 takes {:.1}% of its weight", 200.0 * sl.grad_neg[0][2]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
