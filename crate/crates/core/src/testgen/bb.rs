use super::harness::Harness;

/// Black-box random testing: sample, send, archive first coverers of
/// endpoint, status-class and fault targets.
pub(super) fn run(h: &mut Harness<'_>) {
    while !h.exhausted() {
        let t = h.sample();
        h.execute(t);
    }
}
