//! Experiment configurations shipped with the binary.

pub const PRESETS: &[(&str, &str)] = &[
    ("pLaplace1d-p3", include_str!("../presets/pLaplace1d-p3.cfg")),
    ("exponents-p3", include_str!("../presets/exponents-p3.cfg")),
    ("besov-v-p3", include_str!("../presets/besov-v-p3.cfg")),
    ("besov-p2-l2", include_str!("../presets/besov-p2-l2.cfg")),
    ("excess-p3", include_str!("../presets/excess-p3.cfg")),
    ("classify-p3", include_str!("../presets/classify-p3.cfg")),
    ("gap-autonomous", include_str!("../presets/gap-autonomous.cfg")),
    ("gap-double-phase", include_str!("../presets/gap-double-phase.cfg")),
    ("gap-checkerboard", include_str!("../presets/gap-checkerboard.cfg")),
    ("verify-double-phase", include_str!("../presets/verify-double-phase.cfg")),
];

pub fn find(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
