//! Command-line entry points and the HTTP service.

pub mod commands;
pub mod service;

/// One-line machine-readable error: `{"error": kind, "message": text}`.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Error kind for an `anyhow` chain: the first core error found, else `io`
/// for I/O failures, else `internal`.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<persona_core::Error>() {
            return e.kind();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

/// The chain joined with `: `, skipping causes already quoted by their parent.
pub fn error_message(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|prev| prev.contains(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}
