use std::fs;
use std::io;
use std::os::unix::fs::{symlink, PermissionsExt};
use std::path::{Component, Path, PathBuf};

use crate::{SandboxConfig, SandboxError};

pub(crate) const SRC_DIR: &str = "src";
pub(crate) const WORK_DIR: &str = "work";
pub(crate) const TMP_DIR: &str = "tmp";
/// Device nodes bound into `/dev`.
pub(crate) const DEVICES: [&str; 3] = ["null", "zero", "urandom"];
/// Host files bound read-only into the jail when present.
pub(crate) const HOST_FILES: [&str; 1] = ["etc/ld.so.cache"];

/// How a host directory appears in the jail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum HostEntry {
    /// Bind-mounted read-only.
    Dir(PathBuf),
    /// Recreated as a symlink with the same target (merged-usr layouts).
    Symlink(PathBuf, PathBuf),
}

pub(crate) fn host_layout(config: &SandboxConfig) -> Vec<HostEntry> {
    let mut out = Vec::new();
    for dir in &config.host_dirs {
        let Ok(meta) = fs::symlink_metadata(dir) else {
            continue;
        };
        if meta.file_type().is_symlink() {
            if let Ok(target) = fs::read_link(dir) {
                out.push(HostEntry::Symlink(dir.clone(), target));
            }
        } else if meta.is_dir() {
            out.push(HostEntry::Dir(dir.clone()));
        }
    }
    out
}

/// Jail-relative path of an absolute host path.
pub(crate) fn inside(root: &Path, host: &Path) -> PathBuf {
    root.join(host.strip_prefix("/").unwrap_or(host))
}

/// A prepared jail directory. Dropping it does not remove it; call
/// [`Jail::destroy`].
#[derive(Debug)]
pub struct Jail {
    path: PathBuf,
}

impl Jail {
    pub(crate) fn prepare<P, B>(
        config: &SandboxConfig,
        files: impl IntoIterator<Item = (P, B)>,
    ) -> Result<Jail, SandboxError>
    where
        P: AsRef<str>,
        B: AsRef<[u8]>,
    {
        fs::create_dir_all(&config.jail_root)?;
        let staging = tempfile::Builder::new()
            .prefix(".stage-")
            .tempdir_in(&config.jail_root)?;
        let suffix = staging
            .path()
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix(".stage-"))
            .unwrap_or("x")
            .to_string();
        let root = staging.path().join("root");
        populate(config, &root, files)?;
        let path = config.jail_root.join(format!("jail-{suffix}"));
        fs::rename(staging.keep(), &path)?;
        Ok(Jail { path })
    }

    /// The jail's own directory (holds `root/`).
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// The directory the jailed process sees as `/`.
    pub fn root(&self) -> PathBuf {
        self.path.join("root")
    }

    /// Host path of the writable `/work` directory.
    pub fn work(&self) -> PathBuf {
        self.root().join(WORK_DIR)
    }

    /// Host path of the read-only `/src` directory.
    pub fn src(&self) -> PathBuf {
        self.root().join(SRC_DIR)
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    /// Removes the jail. Safe to call more than once.
    pub fn destroy(&self) -> io::Result<()> {
        if !self.path.exists() {
            return Ok(());
        }
        let name = self
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let trash = self.path.with_file_name(format!(".trash-{name}"));
        match fs::rename(&self.path, &trash) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e),
        }
        make_writable(&trash);
        match fs::remove_dir_all(&trash) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}

fn populate<P, B>(
    config: &SandboxConfig,
    root: &Path,
    files: impl IntoIterator<Item = (P, B)>,
) -> Result<(), SandboxError>
where
    P: AsRef<str>,
    B: AsRef<[u8]>,
{
    let src = root.join(SRC_DIR);
    fs::create_dir_all(&src)?;
    fs::create_dir(root.join(WORK_DIR))?;
    fs::create_dir(root.join(TMP_DIR))?;
    let dev = root.join("dev");
    fs::create_dir(&dev)?;
    for name in DEVICES {
        fs::File::create(dev.join(name))?;
    }
    for file in HOST_FILES {
        let target = root.join(file);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::File::create(target)?;
    }
    for entry in host_layout(config) {
        match entry {
            HostEntry::Dir(host) => fs::create_dir_all(inside(root, &host))?,
            HostEntry::Symlink(host, target) => {
                let link = inside(root, &host);
                if let Some(parent) = link.parent() {
                    fs::create_dir_all(parent)?;
                }
                symlink(target, link)?;
            }
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    for (path, contents) in files {
        let rel = checked_relative(path.as_ref())?;
        if !seen.insert(rel.clone()) {
            return Err(SandboxError::InvalidRequest(format!(
                "duplicate file {}",
                rel.display()
            )));
        }
        let target = src.join(&rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, contents.as_ref())?;
        fs::set_permissions(&target, fs::Permissions::from_mode(0o444))?;
    }
    Ok(())
}

fn checked_relative(path: &str) -> Result<PathBuf, SandboxError> {
    let p = Path::new(path);
    let ok = !path.is_empty()
        && !path.contains('\0')
        && p.components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(p.to_path_buf())
    } else {
        Err(SandboxError::InvalidRequest(format!(
            "file path {path:?} must be relative and stay inside the jail"
        )))
    }
}

/// Jailed code may leave directories without write or search permission.
fn make_writable(dir: &Path) {
    let _ = fs::set_permissions(dir, fs::Permissions::from_mode(0o700));
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            if entry.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                make_writable(&entry.path());
            }
        }
    }
}
