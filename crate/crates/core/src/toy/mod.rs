//! Tabular-softmax distillation simulator.
//!
//! The student is a table of logits indexed by the last `order` tokens, so
//! every distribution, loss and gradient is exact. A [`TeacherDesign`] plants
//! states where the teacher's correction stays on the student's top-K and
//! states where it moves mass elsewhere, giving known ground truth for the
//! selectors and diagnostics.

mod design;
mod grad;
mod policy;
mod prop1;
mod rollout;
mod sim;
mod train;

pub use design::{build_design_bank, DesignBank, TeacherDesign, BANK_ROLLOUT_LEN};
pub use grad::{forward_kl, forward_kl_grad, kl_logprobs, opd_grad, reverse_kl};
pub use policy::TabularPolicy;
pub use prop1::{bank_states, residual_slope, verify_prop1, Prop1Row, BETA_SAFETY};
pub use rollout::{random_prompt_state, rollout, rollout_batch, sample_token, Step};
pub use sim::{run_id, simulate_records, simulate_seed, SimulationConfig};
pub use train::{train_masked, train_masked_with, StepLog, TrainOutcome, TrainerConfig};
