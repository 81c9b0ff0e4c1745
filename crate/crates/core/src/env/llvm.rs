use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{LazyLock, RwLock};
use std::time::Duration;

use regex::Regex;
use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use super::{excerpt, EnvError, Environment, OptLevel, ProgramRegistry};
use crate::features::{extract_features, FeatureVector};
use crate::ir::parse_ir;
use crate::passes::{new_pm_name, PassCatalog};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
const SHIM_NAME: &str = "aware-llvm-opt";

/// How flags are spelled on the `opt` command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagStyle {
    /// One `--pass` argument per pass.
    Legacy,
    /// A single `-passes=a,b,c` pipeline.
    NewPm,
}

#[derive(Debug, Clone)]
pub struct CompilerConfig {
    pub opt_binary: PathBuf,
    pub timeout: Duration,
    pub workdir: PathBuf,
    pub llvm_version_expected: Option<String>,
    pub flag_style: FlagStyle,
}

impl CompilerConfig {
    pub fn new(opt_binary: impl Into<PathBuf>, workdir: impl Into<PathBuf>) -> Result<Self, EnvError> {
        let opt_binary = std::path::absolute(opt_binary.into())?;
        let meta = std::fs::metadata(&opt_binary)
            .map_err(|e| EnvError::MissingBinary(format!("{}: {e}", opt_binary.display())))?;
        if !meta.is_file() || !is_executable(&meta) {
            return Err(EnvError::MissingBinary(format!(
                "{} is not an executable file",
                opt_binary.display()
            )));
        }
        let workdir = workdir.into();
        std::fs::create_dir_all(&workdir)?;
        let flag_style = match llvm_major_version(&opt_binary) {
            Some(v) if v >= 17 => FlagStyle::NewPm,
            _ => FlagStyle::Legacy,
        };
        Ok(CompilerConfig {
            opt_binary,
            timeout: DEFAULT_TIMEOUT,
            workdir,
            llvm_version_expected: None,
            flag_style,
        })
    }

    /// Resolves `opt` from `AWARE_OPT_BIN`, then `PATH`, then the
    /// `aware-llvm-opt` shim installed next to the running executable.
    pub fn discover(workdir: impl Into<PathBuf>) -> Result<Self, EnvError> {
        let path = find_opt().ok_or_else(|| {
            EnvError::MissingBinary("set AWARE_OPT_BIN or put opt on PATH".into())
        })?;
        Self::new(path, workdir)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[cfg(unix)]
fn is_executable(meta: &std::fs::Metadata) -> bool {
    use std::os::unix::fs::PermissionsExt;
    meta.permissions().mode() & 0o111 != 0
}

#[cfg(not(unix))]
fn is_executable(_: &std::fs::Metadata) -> bool {
    true
}

pub fn find_opt() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("AWARE_OPT_BIN").filter(|p| !p.is_empty()) {
        return Some(PathBuf::from(p));
    }
    if let Ok(p) = which::which("opt") {
        return Some(p);
    }
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?;
    // Test binaries live one level down, in `deps/`.
    let found = [Some(dir), dir.parent()]
        .into_iter()
        .flatten()
        .map(|d| d.join(SHIM_NAME))
        .find(|p| p.is_file());
    found
}

static VERSION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"LLVM version (\d+)").unwrap());

pub fn llvm_major_version(opt: &Path) -> Option<u32> {
    let out = Command::new(opt).arg("--version").output().ok()?;
    let text = String::from_utf8_lossy(&out.stdout);
    VERSION_RE.captures(&text)?[1].parse().ok()
}

/// A transformed module. The backing temp directory lives as long as this.
#[derive(Debug)]
pub struct TransformedIr {
    _dir: tempfile::TempDir,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Environment backed by a real `opt` binary.
pub struct LlvmEnv {
    cfg: CompilerConfig,
    registry: ProgramRegistry,
    cache: RwLock<HashMap<(String, String), u64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl LlvmEnv {
    pub fn new(cfg: CompilerConfig, registry: ProgramRegistry) -> Self {
        LlvmEnv {
            cfg,
            registry,
            cache: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &CompilerConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &ProgramRegistry {
        &self.registry
    }

    pub fn cache_stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Runs `opt <flags> <ir> -S -o <out>` in a fresh directory under the
    /// work directory.
    pub fn apply_passes(&self, ir: &Path, flags: &[String]) -> Result<TransformedIr, EnvError> {
        let catalog = PassCatalog::production();
        for f in flags {
            if catalog.index_of(f).is_none() && OptLevel::parse(f).is_none() {
                log::warn!("flag {f} is not in the pass catalog");
            }
        }
        let dir = tempfile::Builder::new()
            .prefix("aware-")
            .tempdir_in(&self.cfg.workdir)?;
        let out = dir.path().join("out.ll");
        let stdout_path = dir.path().join("stdout.txt");
        let stderr_path = dir.path().join("stderr.txt");
        // `opt` runs inside the temp directory, so relative paths would break.
        let ir = std::path::absolute(ir)?;
        let mut cmd = Command::new(&self.cfg.opt_binary);
        match self.cfg.flag_style {
            FlagStyle::Legacy => {
                cmd.args(flags);
            }
            FlagStyle::NewPm if !flags.is_empty() => {
                let names: Vec<String> = flags.iter().map(|f| new_pm_name(f)).collect();
                cmd.arg(format!("-passes={}", names.join(",")));
            }
            FlagStyle::NewPm => {}
        }
        cmd.arg(&ir)
            .arg("-S")
            .arg("-o")
            .arg(&out)
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .stdout(File::create(&stdout_path)?)
            .stderr(File::create(&stderr_path)?);
        let mut child = cmd.spawn()?;
        let status = match child.wait_timeout(self.cfg.timeout)? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EnvError::Timeout(self.cfg.timeout));
            }
        };
        if !status.success() {
            let stderr = std::fs::read_to_string(&stderr_path).unwrap_or_default();
            return Err(EnvError::CompileError {
                stderr: excerpt(&format!("{status}: {stderr}")),
            });
        }
        Ok(TransformedIr { _dir: dir, path: out })
    }

    /// Instruction count of `ir` as printed back by `opt`.
    pub fn count_instructions(&self, ir: &Path) -> Result<u64, EnvError> {
        let t = self.apply_passes(ir, &[])?;
        count_file(&t.path)
    }

    /// Instruction count straight from this crate's parser, without `opt`.
    pub fn count_instructions_internal(ir: &Path) -> Result<u64, EnvError> {
        count_file(ir)
    }

    pub fn run_baseline(&self, ir: &Path, level: OptLevel) -> Result<u64, EnvError> {
        self.cached(ir, &[level.flag().to_string()])
    }

    fn cached(&self, ir: &Path, flags: &[String]) -> Result<u64, EnvError> {
        let bytes = std::fs::read(ir).map_err(|e| EnvError::CompileError {
            stderr: format!("{}: {e}", ir.display()),
        })?;
        let key = (hex::encode(Sha256::digest(&bytes)), flags.join(" "));
        if let Some(&v) = self.cache.read().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let t = self.apply_passes(ir, flags)?;
        let v = count_file(&t.path)?;
        self.cache.write().unwrap().insert(key, v);
        Ok(v)
    }

    fn path_of(&self, id: &str) -> Result<&Path, EnvError> {
        self.registry
            .get(id)
            .ok_or_else(|| EnvError::UnknownProgram(id.to_string()))
    }
}

fn parse_file(path: &Path) -> Result<crate::ir::IrModule, EnvError> {
    let text = std::fs::read_to_string(path).map_err(|e| EnvError::CompileError {
        stderr: format!("{}: {e}", path.display()),
    })?;
    parse_ir(&text).map_err(|e| EnvError::CompileError {
        stderr: format!("{}: unparseable IR: {e}", path.display()),
    })
}

fn count_file(path: &Path) -> Result<u64, EnvError> {
    Ok(parse_file(path)?.instruction_count() as u64)
}

impl Environment for LlvmEnv {
    fn measure(&self, program_id: &str, flags: &[String]) -> Result<u64, EnvError> {
        let path = self.path_of(program_id)?;
        self.cached(path, flags)
    }

    fn features(&self, program_id: &str) -> Result<FeatureVector, EnvError> {
        Ok(extract_features(&parse_file(self.path_of(program_id)?)?))
    }
}
