//! Physics documents: accepted coefficients evaluate to finite values.

#![no_main]

use alterwave::discretize::PhysicsConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(p) = PhysicsConfig::from_json_str(text) else {
        return;
    };
    for &(x1, x2) in &[(0.0, 0.0), (0.3, 1.0), (-2.0, 3.0)] {
        let (a1, a2) = p.magnetic.eval(x1, x2, 0.1);
        let v = p.potential.eval(x1, x2, 0.1);
        assert!(a1.is_finite() && a2.is_finite() && v.is_finite());
    }
});
