use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use tagfuzz_core::coverage::{CoverageSet, HarnessDescriptor, TargetHarness};
use tagfuzz_core::{Error, Result};

/// Runs every test case in a fresh child process.
///
/// The child reads the case on stdin and prints its coverage in the
/// [`CoverageSet::to_text`] format on stdout. A non-zero exit status or a child
/// that outlives `timeout` is an error.
#[derive(Debug, Clone)]
pub struct ProcessHarness {
    pub descriptor: HarnessDescriptor,
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl TargetHarness for ProcessHarness {
    fn descriptor(&self) -> HarnessDescriptor {
        self.descriptor.clone()
    }

    fn execute(&self, test_case: &[u8]) -> Result<CoverageSet> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = test_case.to_vec();
        let feeder = thread::spawn(move || {
            let _ = stdin.write_all(&input);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut out = String::new();
            stdout.read_to_string(&mut out).map(|_| out)
        });
        let start = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if start.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Harness(format!("{} timed out", self.program)));
            }
            thread::sleep(Duration::from_millis(1));
        };
        let _ = feeder.join();
        let out = reader
            .join()
            .map_err(|_| Error::Harness("stdout reader panicked".into()))??;
        if !status.success() {
            return Err(Error::Harness(format!("{} exited with {status}", self.program)));
        }
        CoverageSet::from_text(&out)
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn sh(script: &str, timeout: Duration) -> ProcessHarness {
        ProcessHarness {
            descriptor: HarnessDescriptor {
                name: "sh".into(),
                modules: Vec::new(),
            },
            program: "sh".into(),
            args: vec!["-c".into(), script.into()],
            timeout,
        }
    }

    #[test]
    fn child_output_is_parsed() {
        let mut expected = CoverageSet::new();
        expected.insert(tagfuzz_core::coverage::BasicBlockId::new(0, 3));
        let h = sh(&format!("cat >/dev/null; printf '{}'", expected.to_text()), Duration::from_secs(5));
        assert_eq!(h.execute(b"<p>").unwrap(), expected);
    }

    #[test]
    fn failing_or_slow_child_is_an_error() {
        assert!(sh("exit 3", Duration::from_secs(5)).execute(b"").is_err());
        let t = Instant::now();
        assert!(sh("sleep 5", Duration::from_millis(100)).execute(b"").is_err());
        assert!(t.elapsed() < Duration::from_secs(3));
    }
}
