//! Error classification and atomic file output.

use std::fmt;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use bufplan::harness::HarnessError;
use bufplan::{ArchError, LpError, ModelError, SimError};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;

/// A failure tagged with the module it came from and its exit code.
#[derive(Debug)]
pub struct CliError {
    pub module: &'static str,
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(module: &'static str, message: impl fmt::Display) -> Self {
        CliError {
            module,
            code: EXIT_VALIDATION,
            message: message.to_string(),
        }
    }

    pub fn numerical(module: &'static str, message: impl fmt::Display) -> Self {
        CliError {
            module,
            code: EXIT_NUMERICAL,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.module, self.message)
    }
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> Self {
        CliError::validation("arch_model", e)
    }
}

impl From<bufplan::arch::UnreachableError> for CliError {
    fn from(e: bufplan::arch::UnreachableError) -> Self {
        CliError::validation("splitter", e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::TooLarge { .. } => CliError::numerical("ctmdp_builder", e),
            _ => CliError::validation("ctmdp_builder", e),
        }
    }
}

impl From<LpError> for CliError {
    fn from(e: LpError) -> Self {
        CliError::numerical("lp_engine", e)
    }
}

impl From<bufplan::policy::AllocError> for CliError {
    fn from(e: bufplan::policy::AllocError) -> Self {
        CliError::validation("policy_alloc", e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::validation("des_sim", e)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Arch(e) => e.into(),
            HarnessError::Route(e) => e.into(),
            HarnessError::Model(e) => e.into(),
            HarnessError::Lp(e) => e.into(),
            HarnessError::Alloc(e) => e.into(),
            HarnessError::Sim(e) => e.into(),
            HarnessError::Spec(_) => CliError::validation("harness", e),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::validation("cli", format!("cannot read {}: {e}", path.display())))
}

/// Output directory rooted file writer.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| {
            CliError::validation("cli", format!("cannot create {}: {e}", root.display()))
        })?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    /// `name` must be a plain relative path that stays inside the root.
    pub fn resolve(&self, name: &Path) -> Result<PathBuf, CliError> {
        let inside = !name.as_os_str().is_empty()
            && name.components().all(|c| matches!(c, Component::Normal(_)));
        if !inside {
            return Err(CliError::validation(
                "cli",
                format!("{} must be a relative path inside the output directory", name.display()),
            ));
        }
        Ok(self.root.join(name))
    }

    /// Writes through a temporary file in the destination directory, then
    /// renames it over the target.
    pub fn write(&self, name: impl AsRef<Path>, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.resolve(name.as_ref())?;
        let dir = path.parent().unwrap_or(&self.root);
        std::fs::create_dir_all(dir)
            .and_then(|_| {
                let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
                tmp.write_all(contents.as_bytes())?;
                tmp.as_file().sync_all()?;
                tmp.persist(&path).map_err(|e| e.error)?;
                Ok(())
            })
            .map_err(|e| CliError::validation("cli", format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_failures_are_numerical() {
        let e: CliError = LpError::IterationLimit { limit: 10 }.into();
        assert_eq!((e.code, e.module), (EXIT_NUMERICAL, "lp_engine"));
        let e: CliError = HarnessError::Lp(LpError::Unbounded).into();
        assert_eq!(e.code, EXIT_NUMERICAL);
        let too_large = ModelError::TooLarge {
            subsystem: "a".into(),
            states: 10,
            ceiling: 5,
        };
        assert_eq!(CliError::from(too_large).code, EXIT_NUMERICAL);
        let e: CliError = ArchError::DuplicateId("p".into()).into();
        assert_eq!((e.code, e.module), (EXIT_VALIDATION, "arch_model"));
        assert!(e.to_string().starts_with("error[arch_model]: "));
    }

    #[test]
    fn out_dir_confines_names() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::new(dir.path()).unwrap();
        assert!(out.resolve(Path::new("a/b.txt")).is_ok());
        for bad in ["../x", "/etc/x", "", "a/../../x"] {
            assert!(out.resolve(Path::new(bad)).is_err(), "{bad}");
        }
        out.write("f.txt", "one").unwrap();
        out.write("f.txt", "two").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("f.txt")).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
