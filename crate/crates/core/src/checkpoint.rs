//! JSON checkpoints. Parameters are written as shortest round-trip decimal
//! text, so a save/load cycle reproduces every bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, ParameterVector};
use crate::error::{Error, Result};
use crate::tdvp::TdvpState;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Progress of a step-wise global optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalProgress {
    pub t: f64,
    pub step: usize,
    pub stream: u64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub architecture: String,
    pub n_sites: usize,
    pub n_params: usize,
    pub seed: u64,
    pub ansatz: Ansatz,
    pub theta: ParameterVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdvp: Option<TdvpState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<GlobalProgress>,
}

impl Checkpoint {
    pub fn new(ansatz: &Ansatz, theta: &ParameterVector, seed: u64) -> Result<Self> {
        ansatz.check_parameters(theta)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            architecture: ansatz.architecture().tag().to_string(),
            n_sites: ansatz.n_sites(),
            n_params: ansatz.n_params(),
            seed,
            ansatz: ansatz.clone(),
            theta: theta.clone(),
            tdvp: None,
            global: None,
        })
    }

    pub fn with_tdvp(mut self, state: TdvpState) -> Self {
        self.tdvp = Some(state);
        self
    }

    pub fn with_global(mut self, progress: GlobalProgress) -> Self {
        self.global = Some(progress);
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.architecture != self.ansatz.architecture().tag() {
            return bad(format!("architecture tag {} does not match the stored ansatz", self.architecture));
        }
        if self.n_sites != self.ansatz.n_sites() || self.n_params != self.ansatz.n_params() {
            return bad("shape metadata does not match the stored ansatz".into());
        }
        self.ansatz.check_parameters(&self.theta)?;
        if let Some(s) = &self.tdvp {
            if s.theta != self.theta {
                return bad("integrator state disagrees with stored parameters".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Write via a temporary file in the same directory and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Replace `path` with `bytes` so readers see either the old or the new
/// contents, never a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Sampling;
    use crate::tdvp::TdvpConfig;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn parameters_round_trip_bit_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 12)) {
            let a = Ansatz::jastrow(3).unwrap();
            let theta = ParameterVector::new(values);
            let c = Checkpoint::new(&a, &theta, 7).unwrap();
            let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
            for (x, y) in back.theta.as_slice().iter().zip(theta.as_slice()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn save_load_with_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let a = Ansatz::rbm(4, 2).unwrap();
        let theta = a.random_parameters(1e-2, 3);
        let mut state = TdvpState::initial(theta.clone(), &TdvpConfig::default(), &Sampling::Exact);
        state.t = 0.1 + 0.2;
        state.phase = num_complex::Complex64::new(-1e-300, std::f64::consts::PI);
        let c = Checkpoint::new(&a, &theta, 11).unwrap().with_tdvp(state);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn rejects_inconsistent_files() {
        let a = Ansatz::rbm(2, 1).unwrap();
        let theta = a.random_parameters(0.1, 1);
        let c = Checkpoint::new(&a, &theta, 0).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        v["n_params"] = 3.into();
        assert!(matches!(Checkpoint::from_json(&v.to_string()), Err(Error::Checkpoint(_))));
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        v["theta"] = serde_json::json!([0.0]);
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        v["extra"] = 1.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }
}
