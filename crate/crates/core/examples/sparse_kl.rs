//! Entropy, top-K supports and restricted KL on sparse logprob lists.
//!
//! ```text
//! cargo run --example sparse_kl
//! ```

use teachable::dist::{entropy, kl, renormalize_on, top_k, union_support, SparseTokenDist};

fn main() -> teachable::Result<()> {
    // Top-4 lists as an inference server would return them; the rest of the
    // vocabulary is summarized by the tail mass.
    let student = SparseTokenDist::from_probs(&[(7, 0.55), (2, 0.2), (9, 0.1), (4, 0.05)], Some(0.1), 32)?;
    let teacher = SparseTokenDist::from_probs(&[(2, 0.5), (7, 0.25), (11, 0.15), (9, 0.05)], Some(0.05), 32)?;

    println!("H(student) = {:.4} nats", entropy(&student)?);
    println!("H(teacher) = {:.4} nats", entropy(&teacher)?);

    for k in [1, 2, 4] {
        let s = top_k(&student, k)?;
        let t = top_k(&teacher, k)?;
        let u = union_support(&s, &t);
        let d = kl(&teacher, &student, &u)?;
        println!(
            "K={k}: student top {:?}, teacher top {:?}, union {:?}, KL(T||S) = {d:.4}",
            s.ids(),
            t.ids(),
            u.ids()
        );
    }

    // Token 11 is outside the student's list, so it gets the absent floor.
    let u = union_support(&top_k(&student, 4)?, &top_k(&teacher, 4)?);
    let r = renormalize_on(&student, &u)?;
    for e in r.entries() {
        println!("  student on union: token {:>2}  p = {:.3e}", e.token, e.logprob.exp());
    }
    Ok(())
}
