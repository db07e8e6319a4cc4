//! Prompt and answer wire formats for path-prediction finetuning records.
//!
//! Trajectory answers follow this grammar (ASCII whitespace may appear
//! between any two tokens):
//!
//! ```text
//! answer  = "<ans>" "[" [ item { "," item } ] "]" "</ans>" ;
//! item    = point | action ;
//! point   = "(" number "," number ")" ;
//! action  = "<action>" ( "Open Gripper" | "Close Gripper" ) "</action>" ;
//! number  = digit { digit } [ "." { digit } ] | "." digit { digit } ;
//! ```
//!
//! An action tag sets the gripper state of every point after it. Points
//! before the first tag are open, unless the very first token is an
//! `Open Gripper` tag, in which case the gripper starts closed.
//!
//! Serializers write every coordinate with exactly two decimals, rounded
//! half up, and place a tag directly before the first point of each new
//! gripper state. A path that starts closed gets a leading `Close Gripper`
//! tag so that parsing restores it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::{Path2D, PathPoint};

const PROMPT_TEMPLATE: &str = include_str!("prompt_template.txt");
const PLACEHOLDER: &str = "{quest}";
const OPEN_TAG: &str = "<action>Open Gripper</action>";
const CLOSE_TAG: &str = "<action>Close Gripper</action>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqaError {
    #[error("malformed answer at byte {offset}: {reason}")]
    MalformedAnswer { offset: usize, reason: String },
    #[error("no complete point could be recovered")]
    EmptyAnswer,
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("template must contain exactly one {{quest}} placeholder, found {0}")]
    BadTemplate(usize),
    #[error("value {value} at position {index} is outside its allowed range")]
    OutOfRange { index: usize, value: f64 },
}

fn malformed(offset: usize, reason: impl Into<String>) -> VqaError {
    VqaError::MalformedAnswer { offset, reason: reason.into() }
}

/// Prompt text with a single `{quest}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
}

impl PromptTemplate {
    pub fn new(body: impl Into<String>) -> Result<Self, VqaError> {
        let body = body.into();
        match body.matches(PLACEHOLDER).count() {
            1 => Ok(Self { body }),
            n => Err(VqaError::BadTemplate(n)),
        }
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn render(&self, instruction: &str) -> Result<String, VqaError> {
        if instruction.trim().is_empty() {
            return Err(VqaError::EmptyInstruction);
        }
        let (head, tail) = self.body.split_once(PLACEHOLDER).expect("validated on construction");
        Ok(format!("{head}{instruction}{tail}"))
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(PROMPT_TEMPLATE).expect("bundled template has one placeholder")
    }
}

/// The path-prediction prompt for `instruction`.
pub fn render_prompt(instruction: &str) -> Result<String, VqaError> {
    PromptTemplate::default().render(instruction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    PointPred,
    Sim,
    Real,
    CoTrain,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::PointPred, Source::Sim, Source::Real, Source::CoTrain];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::PointPred => "point_pred",
            Source::Sim => "sim",
            Source::Real => "real",
            Source::CoTrain => "co_train",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| format!("unknown source tag {s:?}"))
    }
}

/// One finetuning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaSample {
    pub image_ref: String,
    pub prompt: String,
    pub answer: String,
    pub source: Source,
}

impl VqaSample {
    pub fn new(image_ref: impl Into<String>, prompt: impl Into<String>, answer: impl Into<String>, source: Source) -> Result<Self, VqaError> {
        let answer = answer.into();
        if answer.is_empty() {
            return Err(malformed(0, "answer must not be empty"));
        }
        Ok(Self { image_ref: image_ref.into(), prompt: prompt.into(), answer, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperAction {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnswerToken {
    Point { x: f64, y: f64 },
    Action(GripperAction),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    Lenient,
}

/// Everything recovered from one answer string.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub path: Path2D,
    pub tokens: Vec<AnswerToken>,
    /// Coordinates pulled back into `[0, 1]` (lenient mode only).
    pub clamped: usize,
    /// False when lenient parsing stopped before a closing bracket.
    pub complete: bool,
}

/// Two-decimal quantization, rounding half up.
pub fn quantize(v: f64) -> f64 {
    (v * 100.0 + 0.5).floor() / 100.0
}

fn fmt2(v: f64) -> String {
    let q = (v * 100.0 + 0.5).floor() as i64;
    let sign = if q < 0 { "-" } else { "" };
    let a = q.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

pub fn serialize_answer(path: &Path2D) -> String {
    let mut items: Vec<String> = Vec::with_capacity(path.len() + 2);
    let mut prev: Option<bool> = None;
    for p in path.points() {
        match prev {
            None if !p.gripper_open => items.push(CLOSE_TAG.to_string()),
            Some(open) if open != p.gripper_open => {
                items.push(if p.gripper_open { OPEN_TAG } else { CLOSE_TAG }.to_string());
            }
            _ => {}
        }
        items.push(format!("({}, {})", fmt2(p.x), fmt2(p.y)));
        prev = Some(p.gripper_open);
    }
    format!("<ans>[{}]</ans>", items.join(", "))
}

struct Scanner<'a> {
    src: &'a [u8],
    pos: usize,
    lenient: bool,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str, mode: ParseMode) -> Self {
        Self { src: text.as_bytes(), pos: 0, lenient: mode == ParseMode::Lenient }
    }

    fn rest(&self) -> &'a [u8] {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), VqaError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(malformed(self.pos, format!("expected {lit:?}")))
        }
    }

    fn number(&mut self) -> Result<f64, VqaError> {
        let start = self.pos;
        if self.lenient && self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let int_digits = self.digits();
        let mut frac_digits = 0;
        if self.peek() == Some(b'.') {
            self.pos += 1;
            frac_digits = self.digits();
        }
        if int_digits + frac_digits == 0 {
            self.pos = start;
            return Err(malformed(start, "expected a decimal number"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        text.parse::<f64>().map_err(|_| malformed(start, "unparseable number"))
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - start
    }

    /// `(` n₁ `,` … `,` nₖ `)` with exactly `arity` numbers.
    fn tuple(&mut self, arity: usize) -> Result<Vec<f64>, VqaError> {
        let start = self.pos;
        self.expect("(")?;
        let mut vals = Vec::with_capacity(arity);
        loop {
            self.skip_ws();
            vals.push(self.number()?);
            self.skip_ws();
            if self.eat(",") {
                continue;
            }
            if self.eat(")") {
                break;
            }
            return Err(malformed(self.pos, "expected ',' or ')' in tuple"));
        }
        if vals.len() != arity {
            return Err(malformed(start, format!("expected {arity} values in tuple, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn action(&mut self) -> Result<GripperAction, VqaError> {
        let start = self.pos;
        if !self.lenient {
            if self.eat(OPEN_TAG) {
                return Ok(GripperAction::Open);
            }
            if self.eat(CLOSE_TAG) {
                return Ok(GripperAction::Close);
            }
            return Err(malformed(start, "unknown action tag"));
        }
        // lenient: "<action>", words separated by any whitespace, any case
        self.expect("<action>")?;
        let end = find(self.rest(), b"</action>").ok_or_else(|| malformed(start, "unterminated action tag"))?;
        let inner = String::from_utf8_lossy(&self.rest()[..end]).to_ascii_lowercase();
        let words: Vec<&str> = inner.split_ascii_whitespace().collect();
        let act = match words.as_slice() {
            ["open", "gripper"] => GripperAction::Open,
            ["close", "gripper"] => GripperAction::Close,
            _ => return Err(malformed(start, "unknown action tag")),
        };
        self.pos += end + "</action>".len();
        Ok(act)
    }

    fn item(&mut self) -> Result<AnswerToken, VqaError> {
        match self.peek() {
            Some(b'(') => {
                let v = self.tuple(2)?;
                Ok(AnswerToken::Point { x: v[0], y: v[1] })
            }
            Some(b'<') => Ok(AnswerToken::Action(self.action()?)),
            _ => Err(malformed(self.pos, "expected a point or an action tag")),
        }
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn strict_tokens(text: &str) -> Result<Vec<AnswerToken>, VqaError> {
    let mut sc = Scanner::new(text, ParseMode::Strict);
    sc.skip_ws();
    sc.expect("<ans>")?;
    sc.skip_ws();
    sc.expect("[")?;
    sc.skip_ws();
    let mut tokens = Vec::new();
    if sc.peek() != Some(b']') {
        loop {
            sc.skip_ws();
            let at = sc.pos;
            let tok = sc.item()?;
            if let AnswerToken::Point { x, y } = tok {
                if !((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)) {
                    return Err(malformed(at, "coordinate outside [0, 1]"));
                }
            }
            tokens.push(tok);
            sc.skip_ws();
            if sc.eat(",") {
                continue;
            }
            if sc.peek() == Some(b']') {
                break;
            }
            return Err(malformed(sc.pos, "expected ',' or ']'"));
        }
    }
    sc.expect("]")?;
    sc.skip_ws();
    sc.expect("</ans>")?;
    sc.skip_ws();
    if !sc.at_end() {
        return Err(malformed(sc.pos, "trailing characters after </ans>"));
    }
    if !tokens.iter().any(|t| matches!(t, AnswerToken::Point { .. })) {
        return Err(malformed(sc.pos, "answer contains no points"));
    }
    Ok(tokens)
}

/// Returns the tokens recovered, whether a closing bracket was reached, and
/// the number of clamped coordinates.
fn lenient_tokens(text: &str) -> (Vec<AnswerToken>, bool, usize) {
    let mut sc = Scanner::new(text, ParseMode::Lenient);
    if let Some(i) = find(sc.src, b"<ans>") {
        sc.pos = i + "<ans>".len();
    } else if let Some(i) = sc.src.iter().position(|&b| b == b'[') {
        sc.pos = i;
    }
    sc.skip_ws();
    sc.eat("[");
    let mut tokens = Vec::new();
    let mut clamped = 0;
    let complete = loop {
        sc.skip_ws();
        if sc.eat("...") || sc.eat("\u{2026}") {
            sc.skip_ws();
            sc.eat(",");
            continue;
        }
        if sc.peek() == Some(b']') || sc.rest().starts_with(b"</ans>") {
            break true;
        }
        if sc.at_end() {
            break false;
        }
        match sc.item() {
            Ok(AnswerToken::Point { x, y }) => {
                let (cx, cy) = (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0));
                clamped += usize::from(cx != x) + usize::from(cy != y);
                tokens.push(AnswerToken::Point { x: cx, y: cy });
            }
            Ok(tok) => tokens.push(tok),
            Err(_) => break false,
        }
        sc.skip_ws();
        sc.eat(",");
    };
    (tokens, complete, clamped)
}

/// Rebuilds per-point gripper state from a token stream.
pub fn tokens_to_path(tokens: &[AnswerToken]) -> Result<Path2D, VqaError> {
    let mut open = !matches!(tokens.first(), Some(AnswerToken::Action(GripperAction::Open)));
    let mut points = Vec::new();
    for tok in tokens {
        match *tok {
            AnswerToken::Action(GripperAction::Open) => open = true,
            AnswerToken::Action(GripperAction::Close) => open = false,
            AnswerToken::Point { x, y } => points.push(PathPoint::new(x, y, open)),
        }
    }
    Path2D::new(points).map_err(|_| VqaError::EmptyAnswer)
}

pub fn parse_answer_detailed(text: &str, mode: ParseMode) -> Result<ParsedAnswer, VqaError> {
    match mode {
        ParseMode::Strict => {
            let tokens = strict_tokens(text)?;
            let path = tokens_to_path(&tokens)?;
            Ok(ParsedAnswer { path, tokens, clamped: 0, complete: true })
        }
        ParseMode::Lenient => {
            let (tokens, complete, clamped) = lenient_tokens(text);
            let path = tokens_to_path(&tokens)?;
            Ok(ParsedAnswer { path, tokens, clamped, complete })
        }
    }
}

pub fn parse_answer(text: &str, mode: ParseMode) -> Result<Path2D, VqaError> {
    parse_answer_detailed(text, mode).map(|p| p.path)
}

fn serialize_tuples(rows: impl Iterator<Item = Vec<f64>>) -> String {
    let items: Vec<String> = rows
        .map(|r| format!("({})", r.into_iter().map(fmt2).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", items.join(", "))
}

fn parse_tuples(text: &str, arity: usize) -> Result<Vec<Vec<f64>>, VqaError> {
    let mut sc = Scanner::new(text, ParseMode::Strict);
    sc.skip_ws();
    sc.expect("[")?;
    sc.skip_ws();
    let mut rows = Vec::new();
    if !sc.eat("]") {
        loop {
            sc.skip_ws();
            rows.push(sc.tuple(arity)?);
            sc.skip_ws();
            if sc.eat(",") {
                continue;
            }
            sc.expect("]")?;
            break;
        }
    }
    sc.skip_ws();
    if !sc.at_end() {
        return Err(malformed(sc.pos, "trailing characters after ']'"));
    }
    Ok(rows)
}

fn check_unit(index: usize, v: f64) -> Result<(), VqaError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(VqaError::OutOfRange { index, value: v })
    }
}

/// Plain `[(x, y), ...]` list for unordered points of interest.
pub fn serialize_points(points: &[(f64, f64)]) -> Result<String, VqaError> {
    for (i, &(x, y)) in points.iter().enumerate() {
        check_unit(i, x)?;
        check_unit(i, y)?;
    }
    Ok(serialize_tuples(points.iter().map(|&(x, y)| vec![x, y])))
}

pub fn parse_points(text: &str) -> Result<Vec<(f64, f64)>, VqaError> {
    let rows = parse_tuples(text, 2)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            check_unit(i, r[0])?;
            check_unit(i, r[1])?;
            Ok((r[0], r[1]))
        })
        .collect()
}

/// Axis-aligned box as centre and size, all normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

fn check_box(i: usize, b: &BoundingBox) -> Result<(), VqaError> {
    check_unit(i, b.cx)?;
    check_unit(i, b.cy)?;
    for v in [b.w, b.h] {
        if !(v > 0.0) {
            return Err(VqaError::OutOfRange { index: i, value: v });
        }
    }
    Ok(())
}

pub fn serialize_bbox(boxes: &[BoundingBox]) -> Result<String, VqaError> {
    for (i, b) in boxes.iter().enumerate() {
        check_box(i, b)?;
    }
    Ok(serialize_tuples(boxes.iter().map(|b| vec![b.cx, b.cy, b.w, b.h])))
}

pub fn parse_bbox(text: &str) -> Result<Vec<BoundingBox>, VqaError> {
    let rows = parse_tuples(text, 4)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let b = BoundingBox { cx: r[0], cy: r[1], w: r[2], h: r[3] };
            check_box(i, &b)?;
            Ok(b)
        })
        .collect()
}
