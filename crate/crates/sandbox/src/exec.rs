//! Fork/exec supervisor.
//!
//! Process layout: the calling thread forks a *keeper* that unshares the
//! namespaces and forks the namespace *init*. Init builds the mount tree,
//! chroots, forks the *target* (which drops privileges and execs) and reaps
//! until the target exits, then reports its status and exits, which tears the
//! whole namespace down. Everything between fork and exec only touches
//! memory prepared before the fork.

use std::ffi::CString;
use std::fs;
use std::io::{self, Read, Write};
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd, RawFd};
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use crate::jail::{self, HostEntry, Jail};
use crate::proc_scan::{self, TreeSample};
use crate::{ExecutionRequest, ExecutionResult, Limits, Outcome, SandboxConfig, SandboxError, Usage};

const TMPFS_OPTIONS: &str = "size=64m,mode=1777";
const POLL_MS: i32 = 10;
const SEARCH_PATH: [&str; 3] = ["/usr/local/bin", "/usr/bin", "/bin"];

const STAGE_UNSHARE: u32 = 1;
const STAGE_FORK: u32 = 2;
const STAGE_MOUNT: u32 = 3;
const STAGE_CHROOT: u32 = 4;
const STAGE_STDIO: u32 = 5;
const STAGE_RLIMIT: u32 = 6;
const STAGE_CREDENTIALS: u32 = 7;
const STAGE_EXEC: u32 = 8;

fn stage_name(stage: u32) -> &'static str {
    match stage {
        STAGE_UNSHARE => "unshare namespaces",
        STAGE_FORK => "fork",
        STAGE_MOUNT => "build mount tree",
        STAGE_CHROOT => "enter jail root",
        STAGE_STDIO => "redirect stdio",
        STAGE_RLIMIT => "apply rlimits",
        STAGE_CREDENTIALS => "drop privileges",
        STAGE_EXEC => "exec",
        _ => "unknown stage",
    }
}

struct Mount {
    source: Option<CString>,
    target: CString,
    fstype: Option<CString>,
    flags: libc::c_ulong,
    data: Option<CString>,
}

/// Everything the children need, allocated before fork.
struct Plan {
    mounts: Vec<Mount>,
    root: CString,
    workdir: CString,
    exec_path: CString,
    _argv: Vec<CString>,
    argv_ptrs: Vec<*const libc::c_char>,
    _envp: Vec<CString>,
    envp_ptrs: Vec<*const libc::c_char>,
    rlimits: Vec<(libc::__rlimit_resource_t, libc::rlim_t)>,
    uid: libc::uid_t,
}

fn cstring(bytes: &[u8]) -> Result<CString, SandboxError> {
    CString::new(bytes).map_err(|_| SandboxError::InvalidRequest("NUL byte in path".into()))
}

fn cpath(path: &Path) -> Result<CString, SandboxError> {
    cstring(path.as_os_str().as_bytes())
}

fn bind(source: &Path, target: &Path) -> Result<Mount, SandboxError> {
    Ok(Mount {
        source: Some(cpath(source)?),
        target: cpath(target)?,
        fstype: None,
        flags: libc::MS_BIND | libc::MS_REC,
        data: None,
    })
}

fn remount(target: &Path, flags: libc::c_ulong) -> Result<Mount, SandboxError> {
    Ok(Mount {
        source: None,
        target: cpath(target)?,
        fstype: None,
        flags: libc::MS_REMOUNT | libc::MS_BIND | flags,
        data: None,
    })
}

fn resolve_program(argv0: &str) -> PathBuf {
    if argv0.contains('/') {
        return PathBuf::from(argv0);
    }
    SEARCH_PATH
        .iter()
        .map(|dir| Path::new(dir).join(argv0))
        .find(|p| p.is_file())
        .unwrap_or_else(|| Path::new("/usr/bin").join(argv0))
}

fn plan(
    config: &SandboxConfig,
    jail: &Jail,
    request: &ExecutionRequest,
    uid: u32,
) -> Result<Plan, SandboxError> {
    let root = jail.root();
    let ro = libc::MS_RDONLY | libc::MS_NOSUID | libc::MS_NODEV;
    let mut mounts = vec![
        Mount {
            source: None,
            target: cstring(b"/")?,
            fstype: None,
            flags: libc::MS_REC | libc::MS_PRIVATE,
            data: None,
        },
        bind(&root, &root)?,
    ];
    for entry in jail::host_layout(config) {
        if let HostEntry::Dir(host) = entry {
            let target = jail::inside(&root, &host);
            mounts.push(bind(&host, &target)?);
            mounts.push(remount(&target, ro)?);
        }
    }
    for file in jail::HOST_FILES {
        let host = Path::new("/").join(file);
        if host.exists() {
            let target = root.join(file);
            mounts.push(bind(&host, &target)?);
            mounts.push(remount(&target, ro)?);
        }
    }
    for dev in jail::DEVICES {
        let host = Path::new("/dev").join(dev);
        let target = root.join("dev").join(dev);
        mounts.push(bind(&host, &target)?);
        mounts.push(remount(&target, libc::MS_NOSUID)?);
    }
    let work = root.join(jail::WORK_DIR);
    mounts.push(bind(&work, &work)?);
    mounts.push(remount(&work, libc::MS_NOSUID | libc::MS_NODEV)?);
    mounts.push(Mount {
        source: Some(cstring(b"tmpfs")?),
        target: cpath(&root.join(jail::TMP_DIR))?,
        fstype: Some(cstring(b"tmpfs")?),
        flags: libc::MS_NOSUID | libc::MS_NODEV,
        data: Some(cstring(TMPFS_OPTIONS.as_bytes())?),
    });
    mounts.push(remount(&root, ro)?);

    let argv: Vec<CString> = request
        .argv
        .iter()
        .map(|a| cstring(a.as_bytes()))
        .collect::<Result<_, _>>()?;
    let home = format!("/{}", request.workdir);
    let mut env = vec![
        format!("PATH={}", SEARCH_PATH.join(":")),
        format!("HOME={home}"),
        "TMPDIR=/tmp".to_string(),
        "LANG=C".to_string(),
        "LC_ALL=C".to_string(),
    ];
    env.extend(request.env.iter().map(|(k, v)| format!("{k}={v}")));
    let envp: Vec<CString> = env
        .iter()
        .map(|e| cstring(e.as_bytes()))
        .collect::<Result<_, _>>()?;

    let limits = &request.limits;
    let cpu_s = limits.cpu_ms.div_ceil(1000) + 1;
    let rlimits = vec![
        (libc::RLIMIT_CPU, cpu_s as libc::rlim_t),
        (libc::RLIMIT_AS, limits.mem_bytes as libc::rlim_t),
        (libc::RLIMIT_NPROC, limits.max_processes as libc::rlim_t),
        (libc::RLIMIT_FSIZE, limits.max_file_bytes as libc::rlim_t),
        (libc::RLIMIT_CORE, 0),
        (libc::RLIMIT_NOFILE, 64),
    ];

    let ptrs = |v: &[CString]| {
        v.iter()
            .map(|c| c.as_ptr())
            .chain(std::iter::once(std::ptr::null()))
            .collect::<Vec<_>>()
    };
    Ok(Plan {
        mounts,
        root: cpath(&root)?,
        workdir: cstring(home.as_bytes())?,
        exec_path: cpath(&resolve_program(&request.argv[0]))?,
        argv_ptrs: ptrs(&argv),
        _argv: argv,
        envp_ptrs: ptrs(&envp),
        _envp: envp,
        rlimits,
        uid,
    })
}

fn pipe() -> io::Result<(OwnedFd, OwnedFd)> {
    let mut fds = [0; 2];
    if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(unsafe { (OwnedFd::from_raw_fd(fds[0]), OwnedFd::from_raw_fd(fds[1])) })
}

/// Hands `dir` and everything below it to `uid`.
fn chown_tree(dir: &Path, uid: u32) -> io::Result<()> {
    std::os::unix::fs::lchown(dir, Some(uid), Some(uid))?;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            chown_tree(&entry.path(), uid)?;
        } else {
            std::os::unix::fs::lchown(entry.path(), Some(uid), Some(uid))?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct ChildFds {
    stdin: RawFd,
    stdout: RawFd,
    stderr: RawFd,
    keeper_pid: RawFd,
    result: RawFd,
    setup: RawFd,
}

mod child {
    //! Code that runs between fork and exec. Only async-signal-safe calls.

    use super::*;

    unsafe fn errno() -> i32 {
        *libc::__errno_location()
    }

    unsafe fn write_all(fd: RawFd, bytes: &[u8]) {
        let mut off = 0;
        while off < bytes.len() {
            let n = libc::write(fd, bytes[off..].as_ptr().cast(), bytes.len() - off);
            if n <= 0 {
                if n < 0 && errno() == libc::EINTR {
                    continue;
                }
                return;
            }
            off += n as usize;
        }
    }

    unsafe fn fail(fd: RawFd, stage: u32) -> ! {
        let mut record = [0u8; 8];
        record[..4].copy_from_slice(&stage.to_ne_bytes());
        record[4..].copy_from_slice(&errno().to_ne_bytes());
        write_all(fd, &record);
        libc::_exit(127)
    }

    unsafe fn close_from_except(keep: RawFd) {
        let keep = keep as libc::c_uint;
        if keep > 3 {
            libc::syscall(libc::SYS_close_range, 3 as libc::c_uint, keep - 1, 0 as libc::c_uint);
        }
        libc::syscall(libc::SYS_close_range, keep + 1, libc::c_uint::MAX, 0 as libc::c_uint);
    }

    pub(super) unsafe fn keeper(plan: &Plan, fds: ChildFds) -> ! {
        libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL as libc::c_ulong);
        let flags = libc::CLONE_NEWNS
            | libc::CLONE_NEWNET
            | libc::CLONE_NEWPID
            | libc::CLONE_NEWIPC
            | libc::CLONE_NEWUTS;
        if libc::unshare(flags) != 0 {
            fail(fds.setup, STAGE_UNSHARE);
        }
        let init = libc::fork();
        if init < 0 {
            fail(fds.setup, STAGE_FORK);
        }
        if init == 0 {
            namespace_init(plan, fds);
        }
        write_all(fds.keeper_pid, &init.to_ne_bytes());
        libc::close(0);
        libc::close(1);
        libc::close(2);
        close_from_except(fds.keeper_pid);
        libc::close(fds.keeper_pid);
        let mut status = 0;
        while libc::waitpid(init, &mut status, 0) < 0 && errno() == libc::EINTR {}
        libc::_exit(0)
    }

    unsafe fn namespace_init(plan: &Plan, fds: ChildFds) -> ! {
        libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL as libc::c_ulong);
        for m in &plan.mounts {
            let opt = |c: &Option<CString>| c.as_ref().map_or(std::ptr::null(), |c| c.as_ptr());
            let rc = libc::mount(
                opt(&m.source),
                m.target.as_ptr(),
                opt(&m.fstype),
                m.flags,
                opt(&m.data).cast(),
            );
            if rc != 0 {
                fail(fds.setup, STAGE_MOUNT);
            }
        }
        if libc::chroot(plan.root.as_ptr()) != 0 || libc::chdir(plan.workdir.as_ptr()) != 0 {
            fail(fds.setup, STAGE_CHROOT);
        }
        let target = libc::fork();
        if target < 0 {
            fail(fds.setup, STAGE_FORK);
        }
        if target == 0 {
            run_target(plan, fds);
        }
        libc::close(0);
        libc::close(1);
        libc::close(2);
        close_from_except(fds.result);
        loop {
            let mut status = 0;
            let mut usage: libc::rusage = std::mem::zeroed();
            let pid = libc::wait4(-1, &mut status, 0, &mut usage);
            if pid == target {
                let tv_ms = |tv: libc::timeval| tv.tv_sec * 1000 + tv.tv_usec / 1000;
                let words: [i64; 4] = [
                    status as i64,
                    tv_ms(usage.ru_utime) + tv_ms(usage.ru_stime),
                    usage.ru_maxrss as i64 * 1024,
                    0,
                ];
                let mut record = [0u8; 32];
                for (i, w) in words.iter().enumerate() {
                    record[i * 8..i * 8 + 8].copy_from_slice(&w.to_ne_bytes());
                }
                write_all(fds.result, &record);
                libc::_exit(0);
            }
            if pid < 0 && errno() != libc::EINTR {
                libc::_exit(1);
            }
        }
    }

    unsafe fn redirect(from: RawFd, to: RawFd) -> bool {
        if from == to {
            return libc::fcntl(to, libc::F_SETFD, 0) == 0;
        }
        libc::dup2(from, to) == to
    }

    unsafe fn run_target(plan: &Plan, fds: ChildFds) -> ! {
        if !redirect(fds.stdin, 0) || !redirect(fds.stdout, 1) || !redirect(fds.stderr, 2) {
            fail(fds.setup, STAGE_STDIO);
        }
        close_from_except(fds.setup);
        for &(resource, value) in &plan.rlimits {
            let lim = libc::rlimit {
                rlim_cur: value,
                rlim_max: value,
            };
            if libc::setrlimit(resource, &lim) != 0 {
                fail(fds.setup, STAGE_RLIMIT);
            }
        }
        let uid = plan.uid;
        let dropped = libc::prctl(libc::PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) == 0
            && libc::setgroups(0, std::ptr::null()) == 0
            && libc::setresgid(uid, uid, uid) == 0
            && libc::setresuid(uid, uid, uid) == 0;
        if !dropped {
            fail(fds.setup, STAGE_CREDENTIALS);
        }
        for sig in 1..32 {
            if sig != libc::SIGKILL && sig != libc::SIGSTOP {
                libc::signal(sig, libc::SIG_DFL);
            }
        }
        let mut empty: libc::sigset_t = std::mem::zeroed();
        libc::sigemptyset(&mut empty);
        libc::sigprocmask(libc::SIG_SETMASK, &empty, std::ptr::null_mut());
        libc::execve(plan.exec_path.as_ptr(), plan.argv_ptrs.as_ptr(), plan.envp_ptrs.as_ptr());
        fail(fds.setup, STAGE_EXEC)
    }
}

/// Keeps up to `cap` bytes and drains the rest.
fn capture(fd: OwnedFd, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut file = fs::File::from(fd);
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match file.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(_) => break,
            }
        }
        (kept, truncated)
    })
}

fn read_exact_or_eof(fd: &OwnedFd, buf: &mut [u8]) -> io::Result<bool> {
    let mut file = fs::File::from(fd.try_clone()?);
    let mut off = 0;
    while off < buf.len() {
        match file.read(&mut buf[off..]) {
            Ok(0) => return Ok(false),
            Ok(n) => off += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn readable(fd: &OwnedFd, timeout_ms: i32) -> bool {
    let mut pfd = libc::pollfd {
        fd: fd.as_raw_fd(),
        events: libc::POLLIN,
        revents: 0,
    };
    unsafe { libc::poll(&mut pfd, 1, timeout_ms) > 0 }
}

fn reap(pid: libc::pid_t) {
    let mut status = 0;
    while unsafe { libc::waitpid(pid, &mut status, 0) } < 0
        && io::Error::last_os_error().kind() == io::ErrorKind::Interrupted
    {}
}

struct Raw {
    status: i32,
    cpu_ms: u64,
    max_rss: u64,
}

fn classify(raw: Option<&Raw>, killed: Option<Outcome>, usage: &Usage, limits: &Limits) -> Outcome {
    if let Some(outcome) = killed {
        return outcome;
    }
    let Some(raw) = raw else {
        return Outcome::SpawnFailed("jail init exited without a status".into());
    };
    let near_memory_cap = usage.max_rss_bytes * 10 >= limits.mem_bytes * 9;
    let status = raw.status;
    if libc::WIFSIGNALED(status) {
        let sig = libc::WTERMSIG(status);
        if sig == libc::SIGXCPU || (sig == libc::SIGKILL && usage.cpu_ms >= limits.cpu_ms) {
            Outcome::TimeoutCpu
        } else if near_memory_cap {
            Outcome::MemExceeded
        } else {
            Outcome::Signaled(sig)
        }
    } else {
        let code = libc::WEXITSTATUS(status);
        if code != 0 && near_memory_cap {
            Outcome::MemExceeded
        } else {
            Outcome::Exited(code)
        }
    }
}

fn wait_until_gone(uid: u32) {
    let deadline = Instant::now() + Duration::from_secs(2);
    while proc_scan::count_processes(uid) > 0 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(5));
    }
}

pub(crate) fn run(
    config: &SandboxConfig,
    jail: &Jail,
    request: &ExecutionRequest,
    uid: u32,
) -> Result<ExecutionResult, SandboxError> {
    let plan = plan(config, jail, request, uid)?;
    let workdir = jail.root().join(&request.workdir);
    if !workdir.is_dir() {
        return Err(SandboxError::InvalidRequest(format!(
            "workdir {} does not exist in the jail",
            request.workdir
        )));
    }
    chown_tree(&jail.work(), uid)?;

    let (stdin_r, stdin_w) = pipe()?;
    let (stdout_r, stdout_w) = pipe()?;
    let (stderr_r, stderr_w) = pipe()?;
    let (pid_r, pid_w) = pipe()?;
    let (result_r, result_w) = pipe()?;
    let (setup_r, setup_w) = pipe()?;
    let fds = ChildFds {
        stdin: stdin_r.as_raw_fd(),
        stdout: stdout_w.as_raw_fd(),
        stderr: stderr_w.as_raw_fd(),
        keeper_pid: pid_w.as_raw_fd(),
        result: result_w.as_raw_fd(),
        setup: setup_w.as_raw_fd(),
    };

    let started = Instant::now();
    let keeper = unsafe { libc::fork() };
    if keeper < 0 {
        return Err(io::Error::last_os_error().into());
    }
    if keeper == 0 {
        unsafe { child::keeper(&plan, fds) }
    }
    drop((stdin_r, stdout_w, stderr_w, pid_w, result_w, setup_w));

    let mut pid_buf = [0u8; 4];
    let have_pid = read_exact_or_eof(&pid_r, &mut pid_buf)?;
    let mut setup_buf = [0u8; 8];
    let setup_failed = read_exact_or_eof(&setup_r, &mut setup_buf)?;
    if setup_failed || !have_pid {
        if have_pid {
            unsafe { libc::kill(libc::pid_t::from_ne_bytes(pid_buf), libc::SIGKILL) };
        }
        reap(keeper);
        wait_until_gone(uid);
        let stage = u32::from_ne_bytes(setup_buf[..4].try_into().unwrap());
        let errno = i32::from_ne_bytes(setup_buf[4..].try_into().unwrap());
        let cause = io::Error::from_raw_os_error(errno);
        if stage == STAGE_EXEC {
            return Ok(ExecutionResult {
                outcome: Outcome::SpawnFailed(format!("{}: {cause}", request.argv[0])),
                stdout: Vec::new(),
                stderr: Vec::new(),
                stdout_truncated: false,
                stderr_truncated: false,
                usage: Usage {
                    wall_ms: started.elapsed().as_millis() as u64,
                    ..Usage::default()
                },
            });
        }
        return Err(SandboxError::IsolationUnavailable(format!(
            "{} failed: {cause}",
            stage_name(stage)
        )));
    }
    let init = libc::pid_t::from_ne_bytes(pid_buf);

    let stdin_bytes = request.stdin.clone();
    let writer = thread::spawn(move || {
        let mut file = fs::File::from(stdin_w);
        let _ = file.write_all(&stdin_bytes);
    });
    let cap = request.limits.output_cap;
    let out = capture(stdout_r, cap);
    let err = capture(stderr_r, cap);

    let limits = request.limits;
    let mut peak = TreeSample::default();
    let mut killed = None;
    let mut raw = None;
    loop {
        if readable(&result_r, POLL_MS) {
            let mut record = [0u8; 32];
            if read_exact_or_eof(&result_r, &mut record)? {
                let word = |i: usize| i64::from_ne_bytes(record[i * 8..i * 8 + 8].try_into().unwrap());
                raw = Some(Raw {
                    status: word(0) as i32,
                    cpu_ms: word(1).max(0) as u64,
                    max_rss: word(2).max(0) as u64,
                });
            }
            break;
        }
        let sample = proc_scan::sample_uid(uid);
        peak.cpu_ms = peak.cpu_ms.max(sample.cpu_ms);
        peak.rss_bytes = peak.rss_bytes.max(sample.rss_bytes);
        let verdict = if started.elapsed() >= Duration::from_millis(limits.wall_ms) {
            Some(Outcome::TimeoutWall)
        } else if sample.cpu_ms >= limits.cpu_ms {
            Some(Outcome::TimeoutCpu)
        } else if sample.rss_bytes > limits.mem_bytes {
            Some(Outcome::MemExceeded)
        } else {
            None
        };
        if let Some(outcome) = verdict {
            unsafe { libc::kill(init, libc::SIGKILL) };
            killed = Some(outcome);
            // Drain whatever init managed to write before dying.
            let mut record = [0u8; 32];
            let _ = read_exact_or_eof(&result_r, &mut record);
            break;
        }
    }
    let wall_ms = started.elapsed().as_millis() as u64;
    reap(keeper);
    wait_until_gone(uid);
    let _ = writer.join();
    let (stdout, stdout_truncated) = out.join().unwrap_or_default();
    let (stderr, stderr_truncated) = err.join().unwrap_or_default();

    let usage = Usage {
        cpu_ms: raw.as_ref().map_or(0, |r| r.cpu_ms).max(peak.cpu_ms),
        max_rss_bytes: raw.as_ref().map_or(0, |r| r.max_rss).max(peak.rss_bytes),
        wall_ms,
    };
    let outcome = classify(raw.as_ref(), killed, &usage, &limits);
    tracing::debug!(argv = ?request.argv, ?outcome, ?usage, "sandboxed command finished");
    Ok(ExecutionResult {
        outcome,
        stdout,
        stderr,
        stdout_truncated,
        stderr_truncated,
        usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(status: i32) -> Raw {
        Raw {
            status,
            cpu_ms: 0,
            max_rss: 0,
        }
    }

    #[test]
    fn classification() {
        let limits = Limits::default();
        let quiet = Usage::default();
        assert_eq!(classify(Some(&raw(0)), None, &quiet, &limits), Outcome::Exited(0));
        assert_eq!(classify(Some(&raw(3 << 8)), None, &quiet, &limits), Outcome::Exited(3));
        assert_eq!(
            classify(Some(&raw(libc::SIGSEGV)), None, &quiet, &limits),
            Outcome::Signaled(libc::SIGSEGV)
        );
        assert_eq!(
            classify(Some(&raw(libc::SIGXCPU)), None, &quiet, &limits),
            Outcome::TimeoutCpu
        );
        let heavy = Usage {
            max_rss_bytes: limits.mem_bytes,
            ..Usage::default()
        };
        assert_eq!(
            classify(Some(&raw(libc::SIGSEGV)), None, &heavy, &limits),
            Outcome::MemExceeded
        );
        assert_eq!(classify(Some(&raw(0)), None, &heavy, &limits), Outcome::Exited(0));
        assert_eq!(
            classify(None, Some(Outcome::TimeoutWall), &quiet, &limits),
            Outcome::TimeoutWall
        );
    }

    #[test]
    fn program_resolution() {
        assert_eq!(resolve_program("/work/prog"), PathBuf::from("/work/prog"));
        assert!(resolve_program("sh").is_absolute());
    }
}
