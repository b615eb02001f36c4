pub mod barycenter;
pub mod common;
pub mod evaluate;
pub mod explain;
pub mod particles;
pub mod sweep;
pub mod synth;

use crate::cli::Command;
use crate::error::Result;
use crate::output::RunManifest;

pub fn dispatch(cmd: &Command) -> Result<RunManifest> {
    match cmd {
        Command::Explain(a) => explain::run(a),
        Command::Sweep(a) => sweep::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Particles(a) => particles::run(a),
        Command::Synth(a) => synth::run(a),
        Command::Barycenter(a) => barycenter::run(a),
    }
}
