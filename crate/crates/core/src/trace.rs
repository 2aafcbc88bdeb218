//! Benchmark samples, model-output parsing and the object tag grammar.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BinaryMask, MaskError, RleCounts, decode_rle, encode_rle};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const SEG_TOKEN: &str = "[SEG]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Comp,
    Func,
    Loc,
    Visf,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Comp,
        Category::Func,
        Category::Loc,
        Category::Visf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Comp => "comp",
            Category::Func => "func",
            Category::Loc => "loc",
            Category::Visf => "visf",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceObject {
    pub obj: u32,
    pub text: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerObject {
    pub obj: u32,
    pub mask: BinaryMask,
}

/// One benchmark item with decoded ground-truth masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub height: u32,
    pub width: u32,
    pub image_ref: String,
    pub question: String,
    pub trace: Vec<TraceObject>,
    pub answer_text: String,
    pub answer: Vec<AnswerObject>,
    pub categories: BTreeSet<Category>,
}

impl Sample {
    pub fn trace_masks(&self) -> impl Iterator<Item = &BinaryMask> {
        self.trace.iter().map(|t| &t.mask)
    }

    pub fn answer_masks(&self) -> impl Iterator<Item = &BinaryMask> {
        self.answer.iter().map(|a| &a.mask)
    }

    /// Trace objects followed by answer objects not already present in the
    /// trace (by object id).
    pub fn joint_masks(&self) -> Vec<&BinaryMask> {
        let seen: HashSet<u32> = self.trace.iter().map(|t| t.obj).collect();
        self.trace_masks()
            .chain(
                self.answer
                    .iter()
                    .filter(|a| !seen.contains(&a.obj))
                    .map(|a| &a.mask),
            )
            .collect()
    }

    pub fn from_record(record: SampleRecord) -> Result<Self, String> {
        let SampleRecord {
            id,
            image,
            question,
            trace,
            answer,
            categories,
        } = record;
        if id.is_empty() {
            return Err("empty sample id".into());
        }
        if trace.is_empty() {
            return Err("sample has no trace objects".into());
        }
        if answer.objects.is_empty() {
            return Err("sample has no answer objects".into());
        }
        if categories.is_empty() {
            return Err("sample has no categories".into());
        }
        let decode = |what: &str, obj: u32, rle: &RleCounts| -> Result<BinaryMask, String> {
            if rle.size != [image.h, image.w] {
                return Err(format!(
                    "{what} obj{obj} mask is {}x{}, image is {}x{}",
                    rle.size[0], rle.size[1], image.h, image.w
                ));
            }
            decode_rle(rle).map_err(|e| format!("{what} obj{obj}: {e}"))
        };

        let mut seen = HashSet::new();
        let mut trace_objects = Vec::with_capacity(trace.len());
        for t in trace {
            if !seen.insert(t.obj) {
                return Err(format!("duplicate trace object id obj{}", t.obj));
            }
            trace_objects.push(TraceObject {
                obj: t.obj,
                mask: decode("trace", t.obj, &t.mask)?,
                text: t.text,
            });
        }
        seen.clear();
        let mut answer_objects = Vec::with_capacity(answer.objects.len());
        for a in answer.objects {
            if !seen.insert(a.obj) {
                return Err(format!("duplicate answer object id obj{}", a.obj));
            }
            answer_objects.push(AnswerObject {
                obj: a.obj,
                mask: decode("answer", a.obj, &a.mask)?,
            });
        }

        Ok(Sample {
            id,
            height: image.h,
            width: image.w,
            image_ref: image.reference,
            question,
            trace: trace_objects,
            answer_text: answer.text,
            answer: answer_objects,
            categories: categories.into_iter().collect(),
        })
    }

    pub fn to_record(&self) -> SampleRecord {
        SampleRecord {
            id: self.id.clone(),
            image: ImageRecord {
                h: self.height,
                w: self.width,
                reference: self.image_ref.clone(),
            },
            question: self.question.clone(),
            trace: self
                .trace
                .iter()
                .map(|t| TraceRecord {
                    obj: t.obj,
                    text: t.text.clone(),
                    mask: encode_rle(&t.mask),
                })
                .collect(),
            answer: AnswerRecord {
                text: self.answer_text.clone(),
                objects: self
                    .answer
                    .iter()
                    .map(|a| AnswerObjectRecord {
                        obj: a.obj,
                        mask: encode_rle(&a.mask),
                    })
                    .collect(),
            },
            categories: self.categories.iter().copied().collect(),
        }
    }
}

// Wire format of one manifest line.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image: ImageRecord,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub trace: Vec<TraceRecord>,
    pub answer: AnswerRecord,
    #[serde(default)]
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub h: u32,
    pub w: u32,
    #[serde(rename = "ref", default)]
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub obj: u32,
    #[serde(default)]
    pub text: String,
    pub mask: RleCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub objects: Vec<AnswerObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerObjectRecord {
    pub obj: u32,
    pub mask: RleCounts,
}

/// Per-category sample totals as declared in a manifest header.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryCounts {
    pub total: usize,
    pub comp: usize,
    pub func: usize,
    pub loc: usize,
    pub visf: usize,
    /// Samples tagged with two or more categories.
    pub multiple: usize,
}

impl CategoryCounts {
    pub fn of<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut c = CategoryCounts::default();
        for s in samples {
            c.total += 1;
            for cat in &s.categories {
                *c.get_mut(*cat) += 1;
            }
            if s.categories.len() >= 2 {
                c.multiple += 1;
            }
        }
        c
    }

    pub fn get(&self, cat: Category) -> usize {
        match cat {
            Category::Comp => self.comp,
            Category::Func => self.func,
            Category::Loc => self.loc,
            Category::Visf => self.visf,
        }
    }

    fn get_mut(&mut self, cat: Category) -> &mut usize {
        match cat {
            Category::Comp => &mut self.comp,
            Category::Func => &mut self.func,
            Category::Loc => &mut self.loc,
            Category::Visf => &mut self.visf,
        }
    }

    fn diff(&self, other: &CategoryCounts) -> Vec<String> {
        let fields = [
            ("total", self.total, other.total),
            ("comp", self.comp, other.comp),
            ("func", self.func, other.func),
            ("loc", self.loc, other.loc),
            ("visf", self.visf, other.visf),
            ("multiple", self.multiple, other.multiple),
        ];
        fields
            .into_iter()
            .filter(|(_, a, b)| a != b)
            .map(|(name, declared, found)| format!("{name}: declared {declared}, found {found}"))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub declared_counts: CategoryCounts,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON record: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line} (sample {id:?}): {reason}")]
    Invalid {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("declared counts do not match samples: {}", .0.join("; "))]
    CountMismatch(Vec<String>),
    #[error("manifest contains no samples")]
    Empty,
}

/// An immutable, validated benchmark.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub samples: Vec<Sample>,
    /// Counts from the manifest header, when present. Always equal to
    /// [`Benchmark::counts`] after a successful load.
    pub declared_counts: Option<CategoryCounts>,
    by_id: HashMap<String, usize>,
}

impl Benchmark {
    pub fn new(
        samples: Vec<Sample>,
        declared_counts: Option<CategoryCounts>,
    ) -> Result<Self, LoadError> {
        if samples.is_empty() {
            return Err(LoadError::Empty);
        }
        let mut by_id = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(LoadError::DuplicateId {
                    line: i + 1,
                    id: s.id.clone(),
                });
            }
        }
        if let Some(declared) = &declared_counts {
            let found = CategoryCounts::of(&samples);
            let diff = declared.diff(&found);
            if !diff.is_empty() {
                return Err(LoadError::CountMismatch(diff));
            }
        }
        Ok(Self {
            samples,
            declared_counts,
            by_id,
        })
    }

    pub fn counts(&self) -> CategoryCounts {
        CategoryCounts::of(&self.samples)
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.by_id.get(id).map(|&i| &self.samples[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Writes the benchmark back to manifest JSONL, header first.
    pub fn write_jsonl(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        if let Some(declared_counts) = self.declared_counts {
            serde_json::to_writer(&mut out, &ManifestHeader { declared_counts })?;
            writeln!(out)?;
        }
        for s in &self.samples {
            serde_json::to_writer(&mut out, &s.to_record())?;
            writeln!(out)?;
        }
        Ok(())
    }
}

fn is_header(value: &serde_json::Value) -> bool {
    value.get("declared_counts").is_some() && value.get("id").is_none()
}

pub fn read_manifest(reader: impl BufRead) -> Result<Benchmark, LoadError> {
    let mut samples = Vec::new();
    let mut declared = None;
    let mut ids = HashSet::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| LoadError::Io {
            path: "<manifest>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| LoadError::Json {
                line: lineno,
                source,
            })?;
        if first && is_header(&value) {
            first = false;
            let header: ManifestHeader =
                serde_json::from_value(value).map_err(|source| LoadError::Json {
                    line: lineno,
                    source,
                })?;
            declared = Some(header.declared_counts);
            continue;
        }
        first = false;
        let record: SampleRecord =
            serde_json::from_value(value).map_err(|source| LoadError::Json {
                line: lineno,
                source,
            })?;
        let id = record.id.clone();
        if !ids.insert(id.clone()) {
            return Err(LoadError::DuplicateId { line: lineno, id });
        }
        let sample = Sample::from_record(record).map_err(|reason| LoadError::Invalid {
            line: lineno,
            id,
            reason,
        })?;
        samples.push(sample);
    }
    Benchmark::new(samples, declared)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Benchmark, LoadError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_manifest(std::io::BufReader::new(file))
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub raw_text: String,
    #[serde(default)]
    pub masks: Vec<RleCounts>,
}

pub fn read_predictions(reader: impl BufRead) -> Result<Vec<PredictionRecord>, LoadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| LoadError::Io {
            path: "<predictions>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| LoadError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, LoadError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_predictions(std::io::BufReader::new(file))
}

// --- object tags ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TagKind {
    /// Evidence object referenced in reasoning.
    Ver,
    /// Object that is part of the direct answer.
    Vea,
}

impl TagKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TagKind::Ver => "ver",
            TagKind::Vea => "vea",
        }
    }
}

/// A `<ver><objN></ver>` or `<vea><objN></vea>` occurrence; `span` is a byte
/// range covering the whole construct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObjectTag {
    pub kind: TagKind,
    pub obj: u32,
    pub span: Range<usize>,
}

impl ObjectTag {
    pub fn render(&self) -> String {
        let k = self.kind.as_str();
        format!("<{k}><obj{}></{k}>", self.obj)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tag grammar violation at {}", .spans.iter().map(|s| format!("{}..{} ({})", s.span.start, s.span.end, s.reason)).collect::<Vec<_>>().join(", "))]
pub struct TagGrammarError {
    pub spans: Vec<TagViolation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagViolation {
    pub span: Range<usize>,
    pub reason: &'static str,
}

static TAG_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<(/?)(ver|vea)>|<obj(0|[1-9][0-9]*)>").unwrap());

enum Token {
    Open(TagKind),
    Close(TagKind),
    Obj(u32),
}

/// Extracts every well-formed object tag. A bare `<objN>` outside a tag pair
/// is plain text; any other deviation is collected into the error.
pub fn parse_object_tags(text: &str) -> Result<Vec<ObjectTag>, TagGrammarError> {
    let tokens: Vec<(Range<usize>, Token)> = TAG_TOKEN
        .captures_iter(text)
        .map(|cap| {
            let whole = cap.get(0).unwrap();
            let tok = if let Some(kind) = cap.get(2) {
                let kind = if kind.as_str() == "ver" {
                    TagKind::Ver
                } else {
                    TagKind::Vea
                };
                if cap[1].is_empty() {
                    Token::Open(kind)
                } else {
                    Token::Close(kind)
                }
            } else {
                match cap[3].parse() {
                    Ok(n) => Token::Obj(n),
                    // Too large for u32; never a valid reference.
                    Err(_) => Token::Obj(u32::MAX),
                }
            };
            (whole.range(), tok)
        })
        .collect();

    let mut tags = Vec::new();
    let mut violations = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let (ref r0, ref t0) = tokens[i];
        match t0 {
            Token::Obj(_) => i += 1,
            Token::Close(_) => {
                violations.push(TagViolation {
                    span: r0.clone(),
                    reason: "closing tag without opening tag",
                });
                i += 1;
            }
            Token::Open(kind) => {
                let obj = tokens.get(i + 1).and_then(|(r, t)| match t {
                    Token::Obj(n) if r.start == r0.end => Some((r.end, *n)),
                    _ => None,
                });
                let Some((obj_end, n)) = obj else {
                    violations.push(TagViolation {
                        span: r0.clone(),
                        reason: "opening tag not followed by <objN>",
                    });
                    i += 1;
                    continue;
                };
                match tokens.get(i + 2) {
                    Some((r2, Token::Close(k2))) if r2.start == obj_end && k2 == kind => {
                        tags.push(ObjectTag {
                            kind: *kind,
                            obj: n,
                            span: r0.start..r2.end,
                        });
                        i += 3;
                    }
                    Some((r2, Token::Close(_))) if r2.start == obj_end => {
                        violations.push(TagViolation {
                            span: r0.start..r2.end,
                            reason: "mismatched closing tag",
                        });
                        i += 3;
                    }
                    _ => {
                        violations.push(TagViolation {
                            span: r0.start..obj_end,
                            reason: "unclosed tag",
                        });
                        i += 2;
                    }
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(tags)
    } else {
        Err(TagGrammarError { spans: violations })
    }
}

// --- model output -----------------------------------------------------------

/// Counts and ordering of the think/answer tags in a model output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FormatFlags {
    pub think_open: usize,
    pub think_close: usize,
    pub answer_open: usize,
    pub answer_close: usize,
    /// Exactly one of each tag, in the order think, /think, answer, /answer.
    pub well_formed: bool,
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("text has {tokens} [SEG] tokens but {masks} masks were supplied")]
    Alignment { tokens: usize, masks: usize },
    #[error("invalid mask: {0}")]
    Mask(#[from] MaskError),
}

/// A model prediction split into thinking and answering regions, with each
/// `[SEG]` token bound to its mask by position.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub thinking: String,
    pub answer: String,
    pub trace_masks: Vec<BinaryMask>,
    pub answer_masks: Vec<BinaryMask>,
    /// Masks whose `[SEG]` token lies outside both regions.
    pub stray_masks: Vec<BinaryMask>,
    /// Text outside both regions, kept for diagnostics only.
    pub outside_text: String,
    pub tags: Vec<ObjectTag>,
    pub tag_error: Option<TagGrammarError>,
    pub flags: FormatFlags,
    /// Number of `[SEG]` tokens inside the answer region.
    pub answer_seg_count: usize,
}

fn positions(text: &str, pat: &str) -> Vec<usize> {
    text.match_indices(pat).map(|(i, _)| i).collect()
}

fn find_from(text: &str, pat: &str, from: usize) -> Option<usize> {
    text[from..].find(pat).map(|i| i + from)
}

/// Best-effort region boundaries: `(think, answer)` byte ranges.
fn regions(text: &str) -> (Range<usize>, Range<usize>) {
    let think = match text.find(THINK_OPEN) {
        Some(p) => {
            let start = p + THINK_OPEN.len();
            let end = find_from(text, THINK_CLOSE, start)
                .or_else(|| find_from(text, ANSWER_OPEN, start))
                .unwrap_or(text.len());
            start..end
        }
        None => match text.find(THINK_CLOSE) {
            // opening tag was part of the prompt
            Some(end) => 0..end,
            None => 0..0,
        },
    };
    let after_think = if think.end == 0 && think.start == 0 {
        0
    } else if text[think.end..].starts_with(THINK_CLOSE) {
        think.end + THINK_CLOSE.len()
    } else {
        think.end
    };
    let answer = match find_from(text, ANSWER_OPEN, after_think) {
        Some(p) => {
            let start = p + ANSWER_OPEN.len();
            let end = find_from(text, ANSWER_CLOSE, start).unwrap_or(text.len());
            start..end
        }
        None => match find_from(text, ANSWER_CLOSE, after_think) {
            Some(end) => after_think..end,
            None => after_think..after_think,
        },
    };
    (think, answer)
}

fn format_flags(text: &str) -> FormatFlags {
    let to = positions(text, THINK_OPEN);
    let tc = positions(text, THINK_CLOSE);
    let ao = positions(text, ANSWER_OPEN);
    let ac = positions(text, ANSWER_CLOSE);
    let well_formed = match (&to[..], &tc[..], &ao[..], &ac[..]) {
        ([a], [b], [c], [d]) => a < b && b + THINK_CLOSE.len() <= *c && c < d,
        _ => false,
    };
    FormatFlags {
        think_open: to.len(),
        think_close: tc.len(),
        answer_open: ao.len(),
        answer_close: ac.len(),
        well_formed,
    }
}

pub fn parse_model_output(text: &str, masks: Vec<BinaryMask>) -> Result<ParsedOutput, OutputError> {
    let segs = positions(text, SEG_TOKEN);
    if segs.len() != masks.len() {
        return Err(OutputError::Alignment {
            tokens: segs.len(),
            masks: masks.len(),
        });
    }
    let (think, answer) = regions(text);

    let mut trace_masks = Vec::new();
    let mut answer_masks = Vec::new();
    let mut stray_masks = Vec::new();
    for (pos, mask) in segs.into_iter().zip(masks) {
        if think.contains(&pos) && pos + SEG_TOKEN.len() <= think.end {
            trace_masks.push(mask);
        } else if answer.contains(&pos) && pos + SEG_TOKEN.len() <= answer.end {
            answer_masks.push(mask);
        } else {
            stray_masks.push(mask);
        }
    }

    let mut outside = String::new();
    let mut cursor = 0;
    for r in [&think, &answer] {
        if r.start > cursor {
            outside.push_str(&text[cursor..r.start]);
        }
        cursor = cursor.max(r.end);
    }
    outside.push_str(&text[cursor..]);
    let outside_text = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
        .iter()
        .fold(outside, |acc, tag| acc.replace(tag, ""))
        .trim()
        .to_string();

    let (tags, tag_error) = match parse_object_tags(text) {
        Ok(tags) => (tags, None),
        Err(e) => (Vec::new(), Some(e)),
    };

    Ok(ParsedOutput {
        thinking: text[think.clone()].to_string(),
        answer_seg_count: answer_masks.len(),
        answer: text[answer].to_string(),
        trace_masks,
        answer_masks,
        stray_masks,
        outside_text,
        tags,
        tag_error,
        flags: format_flags(text),
    })
}

/// Decodes prediction RLEs and parses the text in one step.
pub fn parse_prediction(record: &PredictionRecord) -> Result<ParsedOutput, OutputError> {
    let masks = record
        .masks
        .iter()
        .map(decode_rle)
        .collect::<Result<Vec<_>, _>>()?;
    parse_model_output(&record.raw_text, masks)
}
