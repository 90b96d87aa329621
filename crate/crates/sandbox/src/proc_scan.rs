//! Process-table sampling by real uid, so limits cover the whole tree.

use std::fs;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct TreeSample {
    pub processes: usize,
    /// User plus system time, including reaped children.
    pub cpu_ms: u64,
    pub rss_bytes: u64,
}

fn clock_ticks() -> u64 {
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as u64
    } else {
        100
    }
}

fn page_size() -> u64 {
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as u64
    } else {
        4096
    }
}

fn real_uid(status: &str) -> Option<u32> {
    let line = status.lines().find(|l| l.starts_with("Uid:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Returns (state, ticks, rss pages) from a `/proc/<pid>/stat` line.
fn parse_stat(stat: &str) -> Option<(char, u64, u64)> {
    let rest = &stat[stat.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let state = fields.first()?.chars().next()?;
    let num = |i: usize| fields.get(i).and_then(|f| f.parse::<u64>().ok());
    let ticks = num(11)? + num(12)? + num(13)? + num(14)?;
    Some((state, ticks, num(21)?))
}

pub(crate) fn sample_uid(uid: u32) -> TreeSample {
    let mut sample = TreeSample::default();
    let Ok(entries) = fs::read_dir("/proc") else {
        return sample;
    };
    let ticks_per_s = clock_ticks();
    let page = page_size();
    let mut ticks = 0;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().filter(|n| n.bytes().all(|b| b.is_ascii_digit())) else {
            continue;
        };
        let Ok(status) = fs::read_to_string(format!("/proc/{pid}/status")) else {
            continue;
        };
        if real_uid(&status) != Some(uid) {
            continue;
        }
        let Ok(stat) = fs::read_to_string(format!("/proc/{pid}/stat")) else {
            continue;
        };
        if let Some((state, t, rss)) = parse_stat(&stat) {
            sample.processes += 1;
            ticks += t;
            if state != 'Z' {
                sample.rss_bytes += rss * page;
            }
        }
    }
    sample.cpu_ms = ticks * 1000 / ticks_per_s;
    sample
}

/// Number of live processes whose real uid is `uid`.
pub fn count_processes(uid: u32) -> usize {
    sample_uid(uid).processes
}
