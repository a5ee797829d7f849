use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use dypol_core::io::{parse_request, parse_response, serialize_request, serialize_response};
use dypol_core::{Request, Response};

use crate::Failure;

/// One recorded session: the request as sent and the response it got.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredSession {
    pub id: String,
    pub request: Value,
    pub response: Value,
}

impl StoredSession {
    pub fn request(&self) -> Result<Request, Failure> {
        Ok(parse_request(self.request.to_string().as_bytes())?)
    }

    pub fn response(&self) -> Result<Response, Failure> {
        Ok(parse_response(self.response.to_string().as_bytes())?)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct SessionFile {
    pub sessions: Vec<StoredSession>,
}

impl SessionFile {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
    }

    pub fn open_or_default(path: &Path) -> Result<Self, Failure> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("sessions serialize");
        crate::write(path, text + "\n")
    }

    pub fn next_id(&self) -> String {
        (1..)
            .map(|n| format!("s{n}"))
            .find(|id| self.sessions.iter().all(|s| &s.id != id))
            .expect("unbounded ids")
    }

    pub fn upsert(&mut self, id: &str, request: &Request, response: &Response) {
        let entry = StoredSession {
            id: id.to_string(),
            request: serde_json::from_str(&serialize_request(request)).expect("request JSON"),
            response: serde_json::from_str(&serialize_response(response)).expect("response JSON"),
        };
        match self.sessions.iter_mut().find(|s| s.id == id) {
            Some(s) => *s = entry,
            None => self.sessions.push(entry),
        }
    }
}
