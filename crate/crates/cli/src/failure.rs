use serde::Serialize;
use serde_json::json;

/// A command failure, printed as `{"error": {"kind", "message"}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self }).to_string()
    }

    /// Process exit status: 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind.as_str() {
            "config" | "usage" => 2,
            _ => 1,
        }
    }
}

impl From<sisa_core::Error> for Failure {
    fn from(e: sisa_core::Error) -> Self {
        Failure::new(e.kind(), e.to_string())
    }
}
