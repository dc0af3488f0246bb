//! Python bindings. Built only with the `python` feature; the module is
//! importable as `occusense`.

#[cfg(feature = "python")]
mod bindings;
