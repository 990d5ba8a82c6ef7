//! Line-oriented tool protocol over a loaded scene graph.
//!
//! A request is one line, either a JSON object or `key=value` pairs:
//!
//! ```text
//! {"request_id": "r1", "op": "find_objects", "text": "mug"}
//! request_id=r2 op=plan_path from=0,0,0 to="3.5, 1, 0"
//! ```
//!
//! Every response is a single-line JSON object with `request_id`, `op`, `status`
//! (`ok`, `nonentity` or `error`) and an op-specific `payload`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::SceneGraph;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::memory::MaskOracle;
use crate::objects::CachedObject;

pub const OPS: [&str; 6] = ["find_objects", "find_regions", "plan_path", "list_cache", "stats", "partition"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub request_id: String,
    pub op: String,
    pub args: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Nonentity,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub request_id: String,
    pub op: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_hit: Option<bool>,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ToolResponse {
    fn error(request_id: String, op: String, message: String) -> Self {
        Self {
            request_id,
            op,
            status: Status::Error,
            cache_hit: None,
            payload: Value::Null,
            error: Some(message),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }
}

/// Splits `key=value` pairs on whitespace; values may be double-quoted with `\` escapes.
fn split_pairs(line: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(pairs);
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.next() != Some('=') || key.is_empty() {
            return Err(format!("expected key=value, found '{key}'"));
        }
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(c) => value.push(c),
                        None => return Err("dangling escape".into()),
                    },
                    Some(c) => value.push(c),
                    None => return Err(format!("unterminated quote in value of '{key}'")),
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        pairs.push((key, value));
    }
}

fn value_to_arg(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(value_to_arg).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Parses one request line. A missing `request_id` is left empty for the caller to fill.
pub fn parse_request(line: &str) -> std::result::Result<ToolRequest, String> {
    let trimmed = line.trim();
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    if trimmed.starts_with('{') {
        let obj: BTreeMap<String, Value> = serde_json::from_str(trimmed).map_err(|e| format!("bad JSON: {e}"))?;
        for (k, v) in obj {
            if k == "args" {
                let Value::Object(args) = v else {
                    return Err("'args' must be an object".into());
                };
                for (ak, av) in args {
                    fields.insert(ak, value_to_arg(&av));
                }
            } else {
                fields.insert(k, value_to_arg(&v));
            }
        }
    } else {
        for (k, v) in split_pairs(trimmed)? {
            if fields.insert(k.clone(), v).is_some() {
                return Err(format!("repeated key '{k}'"));
            }
        }
    }
    let op = fields.remove("op").ok_or("missing 'op'")?;
    let request_id = fields.remove("request_id").unwrap_or_default();
    Ok(ToolRequest {
        request_id,
        op,
        args: fields,
    })
}

/// Parses `x,y,z`.
pub fn parse_point(s: &str) -> Result<Vec3> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Param(format!("'{s}' is not x,y,z")))?;
    match v.as_slice() {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(Error::Param(format!("'{s}' is not x,y,z"))),
    }
}

fn arg<'a>(req: &'a ToolRequest, key: &str) -> Result<&'a str> {
    req.args
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Param(format!("missing argument '{key}'")))
}

fn parse_arg<T: std::str::FromStr>(req: &ToolRequest, key: &str) -> Result<Option<T>> {
    req.args
        .get(key)
        .map(|v| v.parse().map_err(|_| Error::Param(format!("bad value for '{key}': {v}"))))
        .transpose()
}

pub fn object_json(o: &CachedObject) -> Value {
    let a = o.bbox.axes;
    json!({
        "object_id": o.object_id,
        "label": o.query_text,
        "center": [o.bbox.center.x, o.bbox.center.y, o.bbox.center.z],
        "axes": [a[(0, 0)], a[(0, 1)], a[(0, 2)], a[(1, 0)], a[(1, 1)], a[(1, 2)], a[(2, 0)], a[(2, 1)], a[(2, 2)]],
        "half_extents": [o.bbox.half_extents.x, o.bbox.half_extents.y, o.bbox.half_extents.z],
        "point_count": o.points.len(),
        "source_keyframes": o.source_keyframes,
        "source_submaps": o.source_submaps,
    })
}

/// Dispatches requests against one engine and oracle, enforcing unique request ids.
pub struct ToolServer<'a> {
    pub engine: &'a mut SceneGraph,
    pub oracle: &'a mut dyn MaskOracle,
    seen_ids: BTreeSet<String>,
    counter: u64,
}

impl<'a> ToolServer<'a> {
    pub fn new(engine: &'a mut SceneGraph, oracle: &'a mut dyn MaskOracle) -> Self {
        Self {
            engine,
            oracle,
            seen_ids: BTreeSet::new(),
            counter: 0,
        }
    }

    /// Parses and handles one line.
    pub fn handle_line(&mut self, line: &str) -> ToolResponse {
        self.counter += 1;
        match parse_request(line) {
            Ok(req) => self.handle_request(req),
            Err(e) => ToolResponse::error(format!("#{}", self.counter), String::new(), format!("parse error: {e}")),
        }
    }

    pub fn handle_request(&mut self, mut req: ToolRequest) -> ToolResponse {
        if req.request_id.is_empty() {
            req.request_id = format!("#{}", self.counter);
        }
        if !self.seen_ids.insert(req.request_id.clone()) {
            return ToolResponse::error(
                req.request_id.clone(),
                req.op,
                format!("duplicate request_id '{}'", req.request_id),
            );
        }
        match self.dispatch(&req) {
            Ok((status, cache_hit, payload)) => ToolResponse {
                request_id: req.request_id,
                op: req.op,
                status,
                cache_hit,
                payload,
                error: None,
            },
            Err(e) => {
                let msg = format!("{}: {e}", req.op);
                ToolResponse::error(req.request_id, req.op, msg)
            }
        }
    }

    fn dispatch(&mut self, req: &ToolRequest) -> Result<(Status, Option<bool>, Value)> {
        match req.op.as_str() {
            "find_objects" => {
                let query = self.engine.embed(arg(req, "text")?)?;
                let mut params = self.engine.config.objects;
                if let Some(k) = parse_arg(req, "max_keyframes")? {
                    params.retrieval.max_keyframes = k;
                }
                if let Some(s) = parse_arg(req, "min_score")? {
                    params.retrieval.min_score = s;
                }
                let out = self.engine.query_object_with(&query, self.oracle, &params)?;
                let status = if out.objects.is_empty() { Status::Nonentity } else { Status::Ok };
                let payload = json!({
                    "query": out.key,
                    "objects": out.objects.iter().map(object_json).collect::<Vec<_>>(),
                    "oracle_calls": out.oracle_calls,
                });
                Ok((status, Some(out.cache_hit), payload))
            }
            "find_regions" => {
                let query = self.engine.embed(arg(req, "text")?)?;
                let (result, hit) = self.engine.query_region(&query)?;
                let status = if result.regions.is_empty() { Status::Nonentity } else { Status::Ok };
                Ok((status, Some(hit), serde_json::to_value(&result)?))
            }
            "plan_path" => {
                let from = parse_point(arg(req, "from")?)?;
                let to = parse_point(arg(req, "to")?)?;
                let path = self.engine.plan_path(&from, &to)?;
                let payload = json!({
                    "tile_ids": path.tile_ids,
                    "cost": path.cost,
                    "polyline": path.polyline.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(),
                });
                Ok((Status::Ok, None, payload))
            }
            "list_cache" => {
                let objects = self.engine.objects();
                let payload = json!({
                    "objects": objects.objects().map(object_json).collect::<Vec<_>>(),
                    "queries": objects.queries(),
                });
                Ok((Status::Ok, None, payload))
            }
            "stats" => Ok((Status::Ok, None, serde_json::to_value(self.engine.stats())?)),
            "partition" => {
                let names: Vec<&str> = arg(req, "categories")?
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .collect();
                let queries = names.iter().map(|n| self.engine.embed(n)).collect::<Result<Vec<_>>>()?;
                let result = self.engine.partition(&queries)?;
                let payload = json!({
                    "labels": result.labels,
                    "community_labels": result.community_labels,
                });
                Ok((Status::Ok, None, payload))
            }
            other => Err(Error::Param(format!("unknown op '{other}'; expected one of {}", OPS.join(", ")))),
        }
    }
}

/// Outcome of a batch script.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub lines: Vec<String>,
    pub errors: usize,
}

impl Transcript {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.errors > 0)
    }

    pub fn text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }
}

/// Runs one request per non-blank, non-`#` line. Parse failures produce an
/// error response naming the line number and execution continues.
pub fn run_script(engine: &mut SceneGraph, oracle: &mut dyn MaskOracle, script: &str) -> Transcript {
    let mut server = ToolServer::new(engine, oracle);
    let mut lines = Vec::new();
    let mut errors = 0;
    for (n, raw) in script.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let response = match parse_request(line) {
            Ok(req) => {
                server.counter += 1;
                server.handle_request(req)
            }
            Err(e) => ToolResponse::error(format!("line-{}", n + 1), String::new(), format!("line {}: {e}", n + 1)),
        };
        if response.status == Status::Error {
            errors += 1;
        }
        lines.push(response.to_line());
    }
    Transcript { lines, errors }
}
