//! VLM-assisted raw annotation: prompt construction, backends, tolerant
//! response parsing, human review state and application onto an asset.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::asset::{
    validate_asset, AbsoluteScale, KinematicConstraint, KinematicKind, MaterialSpec, ObjectAsset,
};
use crate::render::{default_property_views, isolation_image, png_bytes, raster, RenderError, ViewSpec};

const PROMPT_HEAD: &str = include_str!("prompt/head.txt");
const PROMPT_PART: &str = include_str!("prompt/part.txt");
const PROMPT_TAIL: &str = include_str!("prompt/tail.txt");

pub const DEFAULT_API_KEY_ENV: &str = "PHYSASSET_VLM_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("unparseable response: {0}")]
    UnparseableResponse(String),
    #[error("schema violations: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error("annotation labels {annotation:?} do not match asset parts {asset:?}")]
    LabelMismatch { annotation: Vec<u32>, asset: Vec<u32> },
    #[error("part {child} has conflicting movement groups")]
    ConflictingGroups { child: u32 },
    #[error("annotation is not approved (status {0:?})")]
    NotApproved(ReviewStatus),
    #[error("invalid review transition {from:?} -> {to:?}")]
    InvalidTransition { from: ReviewStatus, to: ReviewStatus },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AnnotateError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            AnnotateError::BackendUnavailable(_) | AnnotateError::RateLimited(_) | AnnotateError::Timeout(_)
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotateError + '_ {
    move |source| AnnotateError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementGroup {
    pub labels: Vec<u32>,
    pub movement_type: KinematicKind,
    pub parent_label: Option<u32>,
    pub child_label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPart {
    pub label: u32,
    pub name: String,
    pub material: String,
    /// g/cm³
    pub density: f64,
    pub priority_rank: u32,
    pub neighbors: Vec<MovementGroup>,
    pub basic_description: String,
    pub functional_description: String,
    pub movement_description: String,
    pub grasped_description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub object_name: String,
    pub category: String,
    /// `"L*W*H"` in centimetres.
    pub dimension: String,
    pub parts: Vec<RawPart>,
}

impl RawAnnotation {
    pub fn labels(&self) -> Vec<u32> {
        self.parts.iter().map(|p| p.label).collect()
    }

    /// Structural checks shared by parsed and hand-edited annotations.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = parse_dimension(&self.dimension) {
            out.push(format!("dimension: {e}"));
        }
        for (i, p) in self.parts.iter().enumerate() {
            if !(1..=10).contains(&p.priority_rank) {
                out.push(format!("parts[{i}].priority_rank: {} outside 1..=10", p.priority_rank));
            }
            if !(p.density.is_finite() && p.density > 0.0) {
                out.push(format!("parts[{i}].density: must be positive"));
            }
            for (j, g) in p.neighbors.iter().enumerate() {
                let path = format!("parts[{i}].neighbors[{j}]");
                let wants = matches!(
                    g.movement_type,
                    KinematicKind::B | KinematicKind::C | KinematicKind::D | KinematicKind::CB
                );
                let has = (g.parent_label.is_some(), g.child_label.is_some());
                if wants && has != (true, true) {
                    out.push(format!("{path}: type {} needs parent_label and child_label", g.movement_type));
                }
                if !wants && has != (false, false) {
                    out.push(format!("{path}: type {} takes no parent or child", g.movement_type));
                }
                if let (Some(pa), Some(ch)) = (g.parent_label, g.child_label) {
                    if pa == ch {
                        out.push(format!("{path}: parent and child are both {pa}"));
                    }
                }
            }
        }
        out
    }

    /// Response-style JSON using the key names from the prompt example.
    pub fn to_response_json(&self) -> Value {
        let parts: Vec<Value> = self
            .parts
            .iter()
            .map(|p| {
                let neighbors: Vec<Value> = p
                    .neighbors
                    .iter()
                    .map(|g| {
                        let mut m = Map::new();
                        let labels: Vec<String> = g.labels.iter().map(u32::to_string).collect();
                        m.insert("labels_of_movement_group".into(), labels.join("-").into());
                        m.insert("movement_type".into(), g.movement_type.to_string().into());
                        if let Some(v) = g.parent_label {
                            m.insert("parent_label".into(), v.into());
                        }
                        if let Some(v) = g.child_label {
                            m.insert("child_label".into(), v.into());
                        }
                        Value::Object(m)
                    })
                    .collect();
                serde_json::json!({
                    "label": p.label,
                    "material": p.material,
                    "density": format!("{} g/cm^3", p.density),
                    "name": p.name,
                    "priority_rank": p.priority_rank,
                    "neighbors": neighbors,
                    "Basic_description": p.basic_description,
                    "Functional_description": p.functional_description,
                    "Movement_description": p.movement_description,
                    "Grasped_description": p.grasped_description,
                })
            })
            .collect();
        serde_json::json!({
            "object_name": self.object_name,
            "category": self.category,
            "dimension": self.dimension,
            "parts": parts,
        })
    }

    /// Keeps only the listed part labels, preserving order.
    pub fn restrict(&self, labels: &[u32]) -> Self {
        Self {
            parts: self.parts.iter().filter(|p| labels.contains(&p.label)).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Reads an annotation back off an annotated asset; each joint appears in the
/// neighbor lists of both its parts.
pub fn raw_from_asset(asset: &ObjectAsset) -> RawAnnotation {
    let s = &asset.absolute_scale;
    let mut groups: BTreeMap<u32, Vec<MovementGroup>> = BTreeMap::new();
    for c in &asset.constraints {
        if let (Some(pa), Some(ch)) = (c.parent_part, c.child_part) {
            let g = MovementGroup {
                labels: vec![ch, pa],
                movement_type: c.kind,
                parent_label: Some(pa),
                child_label: Some(ch),
            };
            groups.entry(ch).or_default().push(g.clone());
            groups.entry(pa).or_default().push(g);
        }
    }
    RawAnnotation {
        object_name: asset.object_name.clone(),
        category: asset.category.clone(),
        dimension: format!("{}*{}*{}", s.length_cm, s.width_cm, s.height_cm),
        parts: asset
            .parts
            .iter()
            .map(|p| RawPart {
                label: p.id,
                name: p.name.clone(),
                material: p.material.name.clone(),
                density: p.material.density,
                priority_rank: p.affordance_rank,
                neighbors: groups.remove(&p.id).unwrap_or_default(),
                basic_description: p.descriptions.basic.clone(),
                functional_description: p.descriptions.functional.clone(),
                movement_description: p.descriptions.kinematic.clone(),
                grasped_description: p.descriptions.grasped.clone(),
            })
            .collect(),
    }
}

pub fn parse_dimension(s: &str) -> Result<[f64; 3], String> {
    let vals: Vec<f64> = s
        .split(['*', 'x', 'X', '×'])
        .map(|v| v.trim().trim_end_matches("cm").trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("{s:?} is not L*W*H"))?;
    match vals[..] {
        [l, w, h] if vals.iter().all(|v| v.is_finite() && *v > 0.0) => Ok([l, w, h]),
        _ => Err(format!("{s:?} is not three positive lengths")),
    }
}

/// Accepts a bare number or a number followed by `g/cm^3` / `g/cm3` / `g/cm³`.
pub fn parse_density(v: &Value) -> Result<f64, String> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| "not a number".into()),
        Value::String(s) => {
            let s = s.trim();
            let split = s
                .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
                .unwrap_or(s.len());
            let (num, unit) = s.split_at(split);
            let value: f64 = num.parse().map_err(|_| format!("{s:?} has no leading number"))?;
            let unit: String = unit.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
            match unit.as_str() {
                "" | "g/cm^3" | "g/cm3" | "g/cm³" => Ok(value),
                other => Err(format!("unsupported density unit {other:?}")),
            }
        }
        _ => Err("expected number or string".into()),
    }
}

/// System prompt for `part_count` parts.
pub fn system_prompt(part_count: usize) -> String {
    let mut s = String::from(PROMPT_HEAD);
    for n in 1..=part_count {
        s.push_str(&PROMPT_PART.replace("{n}", &n.to_string()));
    }
    s.push_str(PROMPT_TAIL);
    s
}

/// The example response embedded in the prompt.
pub fn prompt_example() -> &'static str {
    let start = PROMPT_TAIL.find("For example:\n").expect("example marker") + "For example:\n".len();
    let end = PROMPT_TAIL.find("\n\nRemember:").expect("rules marker");
    &PROMPT_TAIL[start..end]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartImage {
    /// Position in the prompt, 1-based (`image_{index}`).
    pub index: usize,
    pub label: u32,
    /// Index into the default view set.
    pub view: usize,
    pub red_pixels: usize,
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionWarning {
    pub part: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub system: String,
    pub images: Vec<PartImage>,
    pub warnings: Vec<OcclusionWarning>,
}

/// One isolation image per part, taken from whichever default view shows the
/// part with the most pixels (first such view on ties).
pub fn build_prompt(asset: &ObjectAsset, resolution: u32) -> Result<Prompt, AnnotateError> {
    let views: Vec<ViewSpec> = default_property_views()
        .into_iter()
        .map(|v| v.with_resolution(resolution, resolution))
        .collect();
    let rasters = views.iter().map(|v| raster(asset, v)).collect::<Result<Vec<_>, _>>()?;
    let counts: Vec<_> = rasters.iter().map(|r| r.part_pixel_counts()).collect();
    let mut images = Vec::new();
    let mut warnings = Vec::new();
    for (i, part) in asset.parts.iter().enumerate() {
        let mut best = (0usize, 0usize);
        for (v, c) in counts.iter().enumerate() {
            let n = c.get(&part.id).copied().unwrap_or(0);
            if n > best.1 {
                best = (v, n);
            }
        }
        if best.1 == 0 {
            log::warn!("part {} is not visible from any default view", part.id);
            warnings.push(OcclusionWarning { part: part.id });
        }
        images.push(PartImage {
            index: i + 1,
            label: part.id,
            view: best.0,
            red_pixels: best.1,
            png: png_bytes(&isolation_image(&rasters[best.0], part.id))?,
        });
    }
    Ok(Prompt {
        system: system_prompt(asset.parts.len()),
        images,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlmRequest {
    pub model: String,
    pub temperature: f64,
    pub system: String,
    pub user: String,
    pub images: Vec<PartImage>,
}

impl VlmRequest {
    pub fn new(model: &str, system: String, images: Vec<PartImage>) -> Self {
        let user = images
            .iter()
            .map(|im| format!("image_{} shows part label {}.", im.index, im.label))
            .collect::<Vec<_>>()
            .join("\n");
        Self {
            model: model.to_string(),
            temperature: 0.0,
            system,
            user,
            images,
        }
    }

    pub fn labels(&self) -> Vec<u32> {
        self.images.iter().map(|i| i.label).collect()
    }

    /// Hex SHA-256 over the model, text and image contents.
    pub fn hash(&self) -> String {
        let images: Vec<Value> = self
            .images
            .iter()
            .map(|im| serde_json::json!({"index": im.index, "label": im.label, "png_sha256": crate::sha256_hex(&im.png)}))
            .collect();
        let v = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "system": self.system,
            "user": self.user,
            "images": images,
        });
        crate::sha256_hex(crate::canonical_json(&v).as_bytes())
    }
}

pub trait VlmBackend {
    fn complete(&self, request: &VlmRequest) -> Result<String, AnnotateError>;
}

/// Offline backend. Answers from canned responses keyed by request hash, or,
/// failing that, from a reference annotation restricted to the requested parts.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub canned: BTreeMap<String, String>,
    pub reference: Option<RawAnnotation>,
}

impl MockBackend {
    pub fn from_annotation(raw: RawAnnotation) -> Self {
        Self {
            canned: BTreeMap::new(),
            reference: Some(raw),
        }
    }

    /// Loads `<hash>.txt` files from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, AnnotateError> {
        let mut canned = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let key = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                canned.insert(key, std::fs::read_to_string(&path).map_err(io_err(&path))?);
            }
        }
        Ok(Self { canned, reference: None })
    }
}

impl VlmBackend for MockBackend {
    fn complete(&self, request: &VlmRequest) -> Result<String, AnnotateError> {
        let hash = request.hash();
        if let Some(text) = self.canned.get(&hash) {
            return Ok(text.clone());
        }
        match &self.reference {
            Some(raw) => Ok(format!(
                "```json\n{}```\n",
                crate::canonical_json(&raw.restrict(&request.labels()).to_response_json())
            )),
            None => Err(AnnotateError::BackendUnavailable(format!("no canned response for {hash}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmConfig {
    /// Chat-completions endpoint URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    /// Larger image sets are split into per-part requests.
    pub max_images_per_request: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Default rendering resolution for isolation images.
    pub resolution: u32,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_s: 120.0,
            max_images_per_request: 16,
            retries: 3,
            backoff_ms: 500,
            resolution: 512,
        }
    }
}

/// OpenAI-style chat-completions client with images as PNG data URLs.
pub struct HttpBackend {
    config: VlmConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: VlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .build()
            .into();
        Self { config, agent }
    }
}

impl VlmBackend for HttpBackend {
    fn complete(&self, request: &VlmRequest) -> Result<String, AnnotateError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut content = vec![serde_json::json!({"type": "text", "text": request.user})];
        for im in &request.images {
            content.push(serde_json::json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{}", b64.encode(&im.png))},
            }));
        }
        let body = serde_json::json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": content},
            ],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let reply: Value = req
            .send_json(&body)
            .map_err(|e| match e {
                ureq::Error::StatusCode(429) => AnnotateError::RateLimited(e.to_string()),
                ureq::Error::Timeout(_) => AnnotateError::Timeout(e.to_string()),
                other => AnnotateError::BackendUnavailable(other.to_string()),
            })?
            .body_mut()
            .read_json()
            .map_err(|e| AnnotateError::BackendUnavailable(e.to_string()))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AnnotateError::UnparseableResponse("reply has no message content".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub tries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            tries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Sends one request, retrying transient failures with exponential backoff.
pub fn query_vlm(backend: &dyn VlmBackend, request: &VlmRequest, retry: &RetryPolicy) -> Result<String, AnnotateError> {
    let hash = request.hash();
    log::info!("vlm request {hash}");
    let mut attempt = 0;
    loop {
        match backend.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if e.retryable() && attempt + 1 < retry.tries.max(1) => {
                let delay = retry.base_delay * 2u32.pow(attempt);
                log::warn!("vlm request {hash} failed ({e}); retrying in {delay:?}");
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Queries in chunks of at most `max_images` parts and merges the parsed
/// results. Object-level fields come from the first chunk.
pub fn annotate_prompt(
    backend: &dyn VlmBackend,
    prompt: &Prompt,
    model: &str,
    max_images: usize,
    retry: &RetryPolicy,
) -> Result<RawAnnotation, AnnotateError> {
    let chunks: Vec<&[PartImage]> = if prompt.images.len() <= max_images.max(1) {
        vec![&prompt.images[..]]
    } else {
        prompt.images.chunks(1).collect()
    };
    let mut merged: Option<RawAnnotation> = None;
    for chunk in chunks {
        let images: Vec<PartImage> = chunk
            .iter()
            .enumerate()
            .map(|(i, im)| PartImage { index: i + 1, ..im.clone() })
            .collect();
        let system = if images.len() == prompt.images.len() {
            prompt.system.clone()
        } else {
            system_prompt(images.len())
        };
        let text = query_vlm(backend, &VlmRequest::new(model, system, images), retry)?;
        let raw = parse_response(&text)?;
        match &mut merged {
            None => merged = Some(raw),
            Some(m) => m.parts.extend(raw.parts),
        }
    }
    let mut out = merged.ok_or_else(|| AnnotateError::UnparseableResponse("no parts to annotate".into()))?;
    out.parts.sort_by_key(|p| p.label);
    Ok(out)
}

/// Parser for the loosely JSON-shaped text models return. It skips `...`
/// placeholders and trailing commas, closes an array when a `"key":` pair or a
/// mismatched `}` shows up, and drops stray `]` inside objects.
struct Lenient<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Lenient<'a> {
    fn err(&self, what: &str) -> AnnotateError {
        AnnotateError::UnparseableResponse(format!("{what} at byte {}", self.pos))
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Whitespace, commas and `...`/`…` placeholders.
    fn skip_filler(&mut self) {
        loop {
            self.skip_ws();
            if self.peek() == Some(b',') {
                self.pos += 1;
            } else if self.s[self.pos..].starts_with(b"..") {
                while self.peek() == Some(b'.') {
                    self.pos += 1;
                }
            } else if self.s[self.pos..].starts_with("…".as_bytes()) {
                self.pos += "…".len();
            } else {
                break;
            }
        }
    }

    fn key_follows(&mut self) -> bool {
        let save = self.pos;
        let ok = self.peek() == Some(b'"') && self.string().is_ok() && {
            self.skip_ws();
            self.peek() == Some(b':')
        };
        self.pos = save;
        ok
    }

    fn value(&mut self) -> Result<Value, AnnotateError> {
        self.skip_ws();
        match self.peek() {
            Some(b'{') => self.object(),
            Some(b'[') => self.array(),
            Some(b'"') => self.string().map(Value::String),
            Some(c) if c == b'-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let w = self.word();
                Ok(match w.as_str() {
                    "true" => Value::Bool(true),
                    "false" => Value::Bool(false),
                    "null" => Value::Null,
                    _ => Value::String(w),
                })
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end")),
        }
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<Value, AnnotateError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, b'-' | b'+' | b'.' | b'e' | b'E'))
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).map_err(|_| self.err("bad number"))?;
        serde_json::from_str::<serde_json::Number>(text)
            .map(Value::Number)
            .or_else(|_| text.parse::<f64>().ok().and_then(serde_json::Number::from_f64).map(Value::Number).ok_or(()))
            .map_err(|_| self.err("bad number"))
    }

    fn string(&mut self) -> Result<String, AnnotateError> {
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return String::from_utf8(out).map_err(|_| self.err("invalid utf-8"));
                }
                Some(b'\\') => {
                    let esc = self.s.get(self.pos + 1).copied().ok_or_else(|| self.err("bad escape"))?;
                    self.pos += 2;
                    match esc {
                        b'n' => out.push(b'\n'),
                        b't' => out.push(b'\t'),
                        b'r' => out.push(b'\r'),
                        b'b' => out.push(8),
                        b'f' => out.push(12),
                        b'u' => {
                            let hex = self.s.get(self.pos..self.pos + 4).ok_or_else(|| self.err("bad escape"))?;
                            let code = u32::from_str_radix(std::str::from_utf8(hex).unwrap_or("?"), 16)
                                .map_err(|_| self.err("bad escape"))?;
                            self.pos += 4;
                            let ch = char::from_u32(code).unwrap_or('\u{fffd}');
                            out.extend_from_slice(ch.to_string().as_bytes());
                        }
                        other => out.push(other),
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn object(&mut self) -> Result<Value, AnnotateError> {
        self.pos += 1;
        let mut map = Map::new();
        loop {
            self.skip_filler();
            match self.peek() {
                None => return Ok(Value::Object(map)),
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(Value::Object(map));
                }
                Some(b']') => self.pos += 1,
                Some(b'"') => {
                    let key = self.string()?;
                    self.skip_ws();
                    if self.peek() != Some(b':') {
                        return Err(self.err("expected ':'"));
                    }
                    self.pos += 1;
                    let v = self.value()?;
                    map.insert(key, v);
                }
                Some(c) if c.is_ascii_alphabetic() => {
                    let key = self.word();
                    self.skip_ws();
                    if self.peek() != Some(b':') {
                        return Err(self.err("expected ':'"));
                    }
                    self.pos += 1;
                    let v = self.value()?;
                    map.insert(key, v);
                }
                Some(_) => return Err(self.err("expected key")),
            }
        }
    }

    fn array(&mut self) -> Result<Value, AnnotateError> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_filler();
            match self.peek() {
                None | Some(b'}') => return Ok(Value::Array(items)),
                Some(b']') => {
                    self.pos += 1;
                    return Ok(Value::Array(items));
                }
                _ if self.key_follows() => return Ok(Value::Array(items)),
                _ => items.push(self.value()?),
            }
        }
    }
}

/// First JSON object in `text`, preferring the contents of a code fence.
pub fn extract_json(text: &str) -> Result<Value, AnnotateError> {
    let body = match text.find("```") {
        Some(open) => {
            let after = &text[open + 3..];
            let after = after.find('\n').map_or(after, |nl| &after[nl + 1..]);
            let inner = after.find("```").map_or(after, |close| &after[..close]);
            if inner.contains('{') {
                inner
            } else {
                text
            }
        }
        None => text,
    };
    let start = body
        .find('{')
        .ok_or_else(|| AnnotateError::UnparseableResponse("no JSON object found".into()))?;
    Lenient {
        s: body[start..].as_bytes(),
        pos: 0,
    }
    .value()
}

fn norm_key(k: &str) -> String {
    k.trim().to_lowercase().replace([' ', '-'], "_")
}

struct Fields<'a> {
    map: BTreeMap<String, &'a Value>,
    path: String,
}

impl<'a> Fields<'a> {
    fn new(v: &'a Value, path: &str, errs: &mut Vec<String>) -> Option<Self> {
        match v {
            Value::Object(m) => Some(Self {
                map: m.iter().map(|(k, v)| (norm_key(k), v)).collect(),
                path: path.to_string(),
            }),
            _ => {
                errs.push(format!("{path}: expected an object"));
                None
            }
        }
    }

    fn at(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).copied().filter(|v| !v.is_null())
    }

    fn text(&self, key: &str, errs: &mut Vec<String>) -> String {
        match self.get(key) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => {
                errs.push(format!("{}: expected a string", self.at(key)));
                String::new()
            }
            None => {
                errs.push(format!("{}: missing", self.at(key)));
                String::new()
            }
        }
    }

    fn uint(&self, key: &str, errs: &mut Vec<String>) -> Option<u32> {
        let v = self.get(key)?;
        let n = match v {
            Value::Number(n) => n.as_u64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        };
        match n.and_then(|n| u32::try_from(n).ok()) {
            Some(n) => Some(n),
            None => {
                errs.push(format!("{}: expected a non-negative integer", self.at(key)));
                None
            }
        }
    }

    fn required_uint(&self, key: &str, errs: &mut Vec<String>) -> u32 {
        if self.get(key).is_none() {
            errs.push(format!("{}: missing", self.at(key)));
            return 0;
        }
        self.uint(key, errs).unwrap_or(0)
    }
}

fn parse_group(v: &Value, path: &str, errs: &mut Vec<String>) -> Option<MovementGroup> {
    let f = Fields::new(v, path, errs)?;
    let labels = match f.get("labels_of_movement_group").or_else(|| f.get("labels")) {
        Some(Value::String(s)) => s
            .split(|c: char| !c.is_ascii_digit())
            .filter(|t| !t.is_empty())
            .filter_map(|t| t.parse().ok())
            .collect(),
        Some(Value::Array(a)) => a.iter().filter_map(|x| x.as_u64().map(|n| n as u32)).collect(),
        Some(Value::Number(n)) => n.as_u64().map(|n| vec![n as u32]).unwrap_or_default(),
        _ => {
            errs.push(format!("{}: missing", f.at("labels_of_movement_group")));
            Vec::new()
        }
    };
    let code = f.text("movement_type", errs);
    let letter = code.trim().trim_start_matches('(');
    let kind = if letter.len() >= 2 && letter[..2].eq_ignore_ascii_case("CB") {
        errs.push(format!("{}: CB is assigned during review only", f.at("movement_type")));
        None
    } else {
        match letter.chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('A') => Some(KinematicKind::A),
            Some('B') => Some(KinematicKind::B),
            Some('C') => Some(KinematicKind::C),
            Some('D') => Some(KinematicKind::D),
            Some('E') => Some(KinematicKind::E),
            _ => {
                if !code.is_empty() {
                    errs.push(format!("{}: {code:?} is not one of A-E", f.at("movement_type")));
                }
                None
            }
        }
    };
    let parent_label = f.uint("parent_label", errs);
    let child_label = f.uint("child_label", errs);
    Some(MovementGroup {
        labels,
        movement_type: kind?,
        parent_label,
        child_label,
    })
}

fn parse_part(v: &Value, path: &str, errs: &mut Vec<String>) -> Option<RawPart> {
    let f = Fields::new(v, path, errs)?;
    let density = match f.get("density") {
        Some(d) => parse_density(d).unwrap_or_else(|e| {
            errs.push(format!("{}: {e}", f.at("density")));
            f64::NAN
        }),
        None => {
            errs.push(format!("{}: missing", f.at("density")));
            f64::NAN
        }
    };
    let neighbors = match f.get("neighbors") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .filter_map(|(j, g)| parse_group(g, &format!("{}[{j}]", f.at("neighbors")), errs))
            .collect(),
        Some(_) => {
            errs.push(format!("{}: expected an array", f.at("neighbors")));
            Vec::new()
        }
        None => Vec::new(),
    };
    Some(RawPart {
        label: f.required_uint("label", errs),
        name: f.text("name", errs),
        material: f.text("material", errs),
        density,
        priority_rank: f.required_uint("priority_rank", errs),
        neighbors,
        basic_description: f.text("basic_description", errs),
        functional_description: f.text("functional_description", errs),
        movement_description: f.text("movement_description", errs),
        grasped_description: f.text("grasped_description", errs),
    })
}

/// Extracts and schema-checks an annotation, reporting every violation with its path.
pub fn parse_response(text: &str) -> Result<RawAnnotation, AnnotateError> {
    let v = extract_json(text)?;
    let mut errs = Vec::new();
    let Some(f) = Fields::new(&v, "", &mut errs) else {
        return Err(AnnotateError::SchemaViolation(errs));
    };
    let parts = match f.get("parts") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .filter_map(|(i, p)| parse_part(p, &format!("parts[{i}]"), &mut errs))
            .collect(),
        _ => {
            errs.push("parts: missing or not an array".into());
            Vec::new()
        }
    };
    let raw = RawAnnotation {
        object_name: f.text("object_name", &mut errs),
        category: f.text("category", &mut errs),
        dimension: f.text("dimension", &mut errs),
        parts,
    };
    if errs.is_empty() {
        errs = raw.violations();
    }
    if errs.is_empty() {
        Ok(raw)
    } else {
        Err(AnnotateError::SchemaViolation(errs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    VlmDone,
    HumanApproved,
    HumanEdited,
    Rejected,
}

impl ReviewStatus {
    pub fn can_move_to(self, to: ReviewStatus) -> bool {
        use ReviewStatus::*;
        matches!(
            (self, to),
            (Pending, VlmDone)
                | (VlmDone, HumanApproved)
                | (VlmDone, HumanEdited)
                | (VlmDone, Rejected)
                | (Rejected, Pending)
                | (HumanApproved, HumanEdited)
                | (HumanEdited, HumanEdited)
        )
    }

    pub fn is_approved(self) -> bool {
        matches!(self, ReviewStatus::HumanApproved | ReviewStatus::HumanEdited)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewState {
    pub status: ReviewStatus,
    pub editor: String,
    pub timestamp: String,
}

impl Default for ReviewState {
    fn default() -> Self {
        Self {
            status: ReviewStatus::Pending,
            editor: String::new(),
            timestamp: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub asset_id: String,
    pub to: ReviewStatus,
    pub editor: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_sha256: Option<String>,
}

impl ReviewState {
    pub fn apply(&self, ev: &ReviewEvent) -> Result<ReviewState, AnnotateError> {
        if !self.status.can_move_to(ev.to) {
            return Err(AnnotateError::InvalidTransition {
                from: self.status,
                to: ev.to,
            });
        }
        Ok(ReviewState {
            status: ev.to,
            editor: ev.editor.clone(),
            timestamp: ev.timestamp.clone(),
        })
    }
}

/// Append-only JSONL log of review transitions for one asset.
pub struct ReviewLog {
    path: PathBuf,
    state: ReviewState,
}

impl ReviewLog {
    /// Opens (or starts) a log, replaying existing events.
    pub fn open(path: &Path) -> Result<Self, AnnotateError> {
        let state = if path.exists() { Self::replay(path)? } else { ReviewState::default() };
        Ok(Self {
            path: path.to_path_buf(),
            state,
        })
    }

    pub fn state(&self) -> &ReviewState {
        &self.state
    }

    pub fn append(&mut self, ev: &ReviewEvent) -> Result<&ReviewState, AnnotateError> {
        let next = self.state.apply(ev)?;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        let line = serde_json::to_string(ev).expect("serializable event");
        writeln!(f, "{line}").map_err(io_err(&self.path))?;
        self.state = next;
        Ok(&self.state)
    }

    pub fn replay(path: &Path) -> Result<ReviewState, AnnotateError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut state = ReviewState::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ev: ReviewEvent = serde_json::from_str(line)
                .map_err(|e| AnnotateError::UnparseableResponse(format!("{}:{}: {e}", path.display(), i + 1)))?;
            state = state.apply(&ev)?;
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub asset: ObjectAsset,
    /// Unfinalized joints awaiting kinematic estimation, ordered by (child, parent).
    pub stubs: Vec<KinematicConstraint>,
}

/// Writes names, materials, ranks, descriptions and scale onto the parts and
/// collects one joint stub per distinct B/C/D/CB group. Existing joints are dropped.
pub fn apply_annotation(asset: &ObjectAsset, raw: &RawAnnotation, review: &ReviewState) -> Result<Applied, AnnotateError> {
    if !review.status.is_approved() {
        return Err(AnnotateError::NotApproved(review.status));
    }
    let mut asset_ids = asset.part_ids();
    asset_ids.sort_unstable();
    let mut labels = raw.labels();
    labels.sort_unstable();
    let mismatch = || AnnotateError::LabelMismatch {
        annotation: labels.clone(),
        asset: asset_ids.clone(),
    };
    if labels != asset_ids {
        return Err(mismatch());
    }
    let errs = raw.violations();
    if !errs.is_empty() {
        return Err(AnnotateError::SchemaViolation(errs));
    }
    let [l, w, h] = parse_dimension(&raw.dimension).map_err(|e| AnnotateError::SchemaViolation(vec![e]))?;
    let mut out = asset.clone();
    out.object_name = raw.object_name.clone();
    out.category = raw.category.clone();
    out.absolute_scale = AbsoluteScale::new(l, w, h);
    out.constraints.clear();
    if !out.provenance.ends_with("+annotated") {
        out.provenance.push_str("+annotated");
    }
    let known: BTreeSet<u32> = asset_ids.iter().copied().collect();
    let mut by_child: BTreeMap<u32, (KinematicKind, u32)> = BTreeMap::new();
    for rp in &raw.parts {
        let part = out.part_mut(rp.label).expect("label checked");
        part.name = rp.name.clone();
        let mut material = MaterialSpec::preset(&rp.material).unwrap_or_else(|| part.material.clone());
        material.name = rp.material.clone();
        material.density = rp.density;
        part.material = material;
        part.affordance_rank = rp.priority_rank;
        part.descriptions.basic = rp.basic_description.clone();
        part.descriptions.functional = rp.functional_description.clone();
        part.descriptions.kinematic = rp.movement_description.clone();
        part.descriptions.grasped = rp.grasped_description.clone();
        for g in &rp.neighbors {
            let (Some(pa), Some(ch)) = (g.parent_label, g.child_label) else {
                continue;
            };
            if !known.contains(&pa) || !known.contains(&ch) {
                return Err(mismatch());
            }
            match by_child.get(&ch) {
                Some(&prev) if prev != (g.movement_type, pa) => return Err(AnnotateError::ConflictingGroups { child: ch }),
                _ => {
                    by_child.insert(ch, (g.movement_type, pa));
                }
            }
        }
    }
    let violations = validate_asset(&out);
    if !violations.is_empty() {
        return Err(AnnotateError::SchemaViolation(
            violations.iter().map(|v| format!("{}: {}", v.path, v.message)).collect(),
        ));
    }
    let stubs = by_child
        .into_iter()
        .map(|(child, (kind, parent))| KinematicConstraint::stub(kind, parent, child))
        .collect();
    Ok(Applied { asset: out, stubs })
}
