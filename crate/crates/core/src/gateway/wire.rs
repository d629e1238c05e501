//! Text framing shared by requests, responses and pushed events.
//!
//! ```text
//! DBX/1 POST /apps/install          DBX/1 200 OK            DBX/1 EVENT notification
//! auth: session 3f2a...             content-length: 17      content-length: 120
//! content-length: 42
//!                                   {"status":"done"}       {...}
//! {...}
//! ```
//!
//! Header names are lower-case ASCII. Bodies are JSON (or JSON lines for audit
//! dumps) and always length-prefixed.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

pub const VERSION: &str = "DBX/1";
pub const MAX_HEAD: usize = 16 * 1024;
pub const MAX_BODY: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("connection closed")]
    Closed,
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("frame exceeds {0} bytes")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Delete => "DELETE",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Some(match s {
            "GET" => Method::Get,
            "POST" => Method::Post,
            "PUT" => Method::Put,
            "DELETE" => Method::Delete,
            _ => return None,
        })
    }
}

/// Credentials carried in the `auth` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Auth {
    None,
    Session(String),
    Token(String),
}

impl Auth {
    fn header(&self) -> Option<String> {
        match self {
            Auth::None => None,
            Auth::Session(s) => Some(format!("session {s}")),
            Auth::Token(t) => Some(format!("token {t}")),
        }
    }

    fn parse(v: &str) -> Result<Auth, WireError> {
        match v.split_once(' ') {
            Some(("session", s)) if !s.is_empty() => Ok(Auth::Session(s.to_string())),
            Some(("token", t)) if !t.is_empty() => Ok(Auth::Token(t.to_string())),
            _ => Err(WireError::Malformed(format!("auth header {v:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: Method,
    /// Path without the query string.
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub auth: Auth,
    pub body: Vec<u8>,
}

impl Request {
    pub fn new(method: Method, target: &str) -> Self {
        let (path, query) = match target.split_once('?') {
            Some((p, q)) => (p, form_urlencoded::parse(q.as_bytes()).into_owned().collect()),
            None => (target, BTreeMap::new()),
        };
        Self {
            method,
            path: path.to_string(),
            query,
            auth: Auth::None,
            body: Vec::new(),
        }
    }

    pub fn with_auth(mut self, auth: Auth) -> Self {
        self.auth = auth;
        self
    }

    pub fn with_json(mut self, body: &serde_json::Value) -> Self {
        self.body = serde_json::to_vec(body).expect("json serializes");
        self
    }

    pub fn target(&self) -> String {
        if self.query.is_empty() {
            self.path.clone()
        } else {
            let q = form_urlencoded::Serializer::new(String::new())
                .extend_pairs(&self.query)
                .finish();
            format!("{}?{q}", self.path)
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut head = format!("{VERSION} {} {}\n", self.method.as_str(), self.target());
        if let Some(a) = self.auth.header() {
            head.push_str(&format!("auth: {a}\n"));
        }
        write_frame(w, head, &self.body)
    }

    /// Reads one request; `Closed` on a clean end of stream.
    pub fn read_from(r: &mut impl BufRead) -> Result<Request, WireError> {
        let (first, headers, body) = read_frame(r)?;
        let mut parts = first.splitn(3, ' ');
        let (Some(VERSION), Some(m), Some(target)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(WireError::Malformed(format!("request line {first:?}")));
        };
        let method = Method::parse(m).ok_or_else(|| WireError::Malformed(format!("method {m:?}")))?;
        let mut req = Request::new(method, target);
        if let Some(a) = headers.get("auth") {
            req.auth = Auth::parse(a)?;
        }
        req.body = body;
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn json(status: u16, body: &serde_json::Value) -> Self {
        Self {
            status,
            headers: BTreeMap::new(),
            body: serde_json::to_vec(body).expect("json serializes"),
        }
    }

    pub fn text(status: u16, body: String) -> Self {
        Self {
            status,
            headers: BTreeMap::new(),
            body: body.into_bytes(),
        }
    }

    pub fn with_header(mut self, k: &str, v: &str) -> Self {
        self.headers.insert(k.to_string(), v.to_string());
        self
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn json_body(&self) -> Result<serde_json::Value, serde_json::Error> {
        serde_json::from_slice(&self.body)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut head = format!("{VERSION} {} {}\n", self.status, reason(self.status));
        for (k, v) in &self.headers {
            head.push_str(&format!("{k}: {v}\n"));
        }
        write_frame(w, head, &self.body)
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Response, WireError> {
        let (first, mut headers, body) = read_frame(r)?;
        let mut parts = first.splitn(3, ' ');
        let (Some(VERSION), Some(code)) = (parts.next(), parts.next()) else {
            return Err(WireError::Malformed(format!("status line {first:?}")));
        };
        let status = code
            .parse()
            .map_err(|_| WireError::Malformed(format!("status {code:?}")))?;
        headers.remove("content-length");
        Ok(Response { status, headers, body })
    }
}

/// One pushed event on an event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub kind: String,
    pub body: Vec<u8>,
}

impl Event {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_frame(w, format!("{VERSION} EVENT {}\n", self.kind), &self.body)
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Event, WireError> {
        let (first, _, body) = read_frame(r)?;
        match first.split_once(' ') {
            Some((VERSION, rest)) => match rest.split_once(' ') {
                Some(("EVENT", kind)) => Ok(Event {
                    kind: kind.to_string(),
                    body,
                }),
                _ => Err(WireError::Malformed(format!("event line {first:?}"))),
            },
            _ => Err(WireError::Malformed(format!("event line {first:?}"))),
        }
    }
}

pub fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        409 => "Conflict",
        422 => "Unprocessable",
        500 => "Internal Error",
        _ => "Status",
    }
}

fn write_frame(w: &mut impl Write, mut head: String, body: &[u8]) -> std::io::Result<()> {
    head.push_str(&format!("content-length: {}\n\n", body.len()));
    w.write_all(head.as_bytes())?;
    w.write_all(body)?;
    w.flush()
}

type Frame = (String, BTreeMap<String, String>, Vec<u8>);

fn read_frame(r: &mut impl BufRead) -> Result<Frame, WireError> {
    let mut head_bytes = 0usize;
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<usize, WireError> {
        line.clear();
        let n = std::io::Read::take(&mut *r, (MAX_HEAD + 1) as u64).read_line(line)?;
        head_bytes += n;
        if head_bytes > MAX_HEAD {
            return Err(WireError::TooLarge(MAX_HEAD));
        }
        Ok(n)
    };
    if read_line(&mut line)? == 0 {
        return Err(WireError::Closed);
    }
    let first = line.trim_end_matches(['\r', '\n']).to_string();
    let mut headers = BTreeMap::new();
    loop {
        if read_line(&mut line)? == 0 {
            return Err(WireError::Malformed("end of stream inside header".into()));
        }
        let l = line.trim_end_matches(['\r', '\n']);
        if l.is_empty() {
            break;
        }
        let (k, v) = l
            .split_once(':')
            .ok_or_else(|| WireError::Malformed(format!("header {l:?}")))?;
        headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    let len: usize = headers
        .get("content-length")
        .ok_or_else(|| WireError::Malformed("missing content-length".into()))?
        .parse()
        .map_err(|_| WireError::Malformed("content-length".into()))?;
    if len > MAX_BODY {
        return Err(WireError::TooLarge(MAX_BODY));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok((first, headers, body))
}
