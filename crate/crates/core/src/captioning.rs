//! Question-guided captioning: frame windows, keyword extraction, caption
//! prompts, and the per-window captioning pass.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatRequest, MediaRef, Message, ModelBackend, ModelTurnWire};
use crate::types::{QuestionRecord, TimeSpan};

pub const DEFAULT_WINDOW_SIZE: u32 = 5;
pub const DEFAULT_OVERLAP: u32 = 1;

/// Inclusive frame range captioned together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub start_frame: u32,
    pub end_frame: u32,
    #[serde(default = "default_fps")]
    pub fps: u32,
}

fn default_fps() -> u32 {
    1
}

impl FrameWindow {
    pub fn len(&self) -> u32 {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Seconds covered by the window, frame `i` sitting at `i / fps`.
    pub fn time_span(&self) -> TimeSpan {
        let fps = f64::from(self.fps.max(1));
        TimeSpan::new(f64::from(self.start_frame) / fps, f64::from(self.end_frame) / fps)
            .expect("start_frame <= end_frame")
    }

    pub fn frames(&self) -> core::ops::RangeInclusive<usize> {
        self.start_frame as usize..=self.end_frame as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("invalid window config: size={size}, overlap={overlap}, frames={frame_count}")]
    InvalidWindowConfig { frame_count: u32, size: u32, overlap: u32 },
}

/// Splits `frame_count` frames into windows of `window_size` that advance
/// by `window_size - overlap`. A final window shorter than two frames is
/// folded into its predecessor.
pub fn plan_windows(frame_count: u32, window_size: u32, overlap: u32) -> Result<Vec<FrameWindow>, WindowError> {
    if window_size < 2 || overlap >= window_size || frame_count == 0 {
        return Err(WindowError::InvalidWindowConfig {
            frame_count,
            size: window_size,
            overlap,
        });
    }
    let stride = window_size - overlap;
    let last = frame_count - 1;
    let mut windows = Vec::new();
    let mut start = 0u32;
    loop {
        let end = (start + window_size - 1).min(last);
        windows.push(FrameWindow {
            start_frame: start,
            end_frame: end,
            fps: 1,
        });
        if end == last {
            break;
        }
        start += stride;
    }
    if windows.len() > 1 && windows[windows.len() - 1].len() < 2 {
        let tail = windows.pop().expect("len > 1");
        windows.last_mut().expect("len > 1").end_frame = tail.end_frame;
    }
    Ok(windows)
}

/// Closed stopword list applied by [`extract_keywords`]. Sorted.
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "did",
    "do",
    "does",
    "doing",
    "don",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercased alphanumeric tokens in order of appearance.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Deduplicated keywords in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeywordSet(Vec<String>);

impl KeywordSet {
    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    fn push_unique(&mut self, token: String) {
        if !self.0.contains(&token) {
            self.0.push(token);
        }
    }
}

pub fn extract_keywords(question: &str, options: &[String]) -> KeywordSet {
    let mut set = KeywordSet::default();
    let texts = core::iter::once(question).chain(options.iter().map(String::as_str));
    for token in texts.flat_map(tokenize) {
        if token.chars().count() >= 2 && !is_stopword(&token) {
            set.push_unique(token);
        }
    }
    set
}

const TEMPORAL_INSTRUCTION: &str = "These frames are consecutive and sampled at one frame per second. \
Describe them together as one continuous segment: say how actions unfold and how people and objects move \
or change from the first frame to the last.";

/// Header of the keyword-emphasis block in guided prompts.
pub const KEYWORD_BLOCK_HEADER: &str = "Focus keywords:";

const GENERIC_INSTRUCTION: &str = "Describe what is visible in these frames.";

pub fn build_caption_prompt(window: &FrameWindow, keywords: &KeywordSet, guided: bool) -> String {
    let span = window.time_span();
    let mut prompt = format!("You are given {} video frames covering {}.\n", window.len(), span);
    if !guided {
        prompt.push_str(GENERIC_INSTRUCTION);
        prompt.push('\n');
        return prompt;
    }
    prompt.push_str(TEMPORAL_INSTRUCTION);
    prompt.push('\n');
    if !keywords.is_empty() {
        prompt.push_str(KEYWORD_BLOCK_HEADER);
        prompt.push(' ');
        prompt.push_str(&keywords.as_slice().join(", "));
        prompt.push('\n');
        prompt.push_str(
            "Highlight the objects, people, and actions named by these keywords wherever they appear, \
and mention when they appear. Leave out details unrelated to them.\n",
        );
    }
    prompt
}

pub const CAPTIONER_SYSTEM_PROMPT: &str =
    "You are a video captioner. Reply with a single caption paragraph and nothing else.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub window: FrameWindow,
    pub text: String,
    pub question_guided: bool,
    pub keywords_used: KeywordSet,
}

impl Caption {
    pub fn time_span(&self) -> TimeSpan {
        self.window.time_span()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionSettings {
    pub model_id: String,
    pub guided: bool,
    pub window_size: u32,
    pub overlap: u32,
}

impl Default for CaptionSettings {
    fn default() -> Self {
        CaptionSettings {
            model_id: "captioner".to_string(),
            guided: true,
            window_size: DEFAULT_WINDOW_SIZE,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptionError {
    #[error("no frames to caption")]
    NoFrames,
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("captioning window {window} failed: {source}")]
    BackendFailure { window: usize, source: BackendError },
}

/// Request sent to the captioner for one window.
pub fn caption_request(
    frames: &[MediaRef],
    window: &FrameWindow,
    keywords: &KeywordSet,
    settings: &CaptionSettings,
) -> ChatRequest {
    let prompt = build_caption_prompt(window, keywords, settings.guided);
    let media = frames[window.frames()].to_vec();
    ChatRequest::new(
        settings.model_id.clone(),
        alloc::vec![
            Message::system(CAPTIONER_SYSTEM_PROMPT),
            Message::user_with_media(prompt, media),
        ],
    )
}

/// Captions one planned window.
pub fn caption_window(
    frames: &[MediaRef],
    index: usize,
    window: &FrameWindow,
    keywords: &KeywordSet,
    settings: &CaptionSettings,
    backend: &dyn ModelBackend,
) -> Result<Caption, CaptionError> {
    let fail = |source| CaptionError::BackendFailure { window: index, source };
    let request = caption_request(frames, window, keywords, settings);
    let text = match backend.complete(&request).map_err(fail)? {
        ModelTurnWire::Text { content } if !content.trim().is_empty() => content.trim().to_string(),
        ModelTurnWire::Text { .. } => return Err(fail(BackendError::UnexpectedTurn("empty caption".into()))),
        ModelTurnWire::ToolCall { name, .. } => {
            return Err(fail(BackendError::UnexpectedTurn(format!("tool call `{name}`"))))
        }
    };
    Ok(Caption {
        window: *window,
        text,
        question_guided: settings.guided,
        keywords_used: if settings.guided {
            keywords.clone()
        } else {
            KeywordSet::default()
        },
    })
}

/// Keywords for a question under the given settings; empty when unguided.
pub fn keywords_for(question: &QuestionRecord, settings: &CaptionSettings) -> KeywordSet {
    if settings.guided {
        extract_keywords(&question.question, &question.options)
    } else {
        KeywordSet::default()
    }
}

/// Captions every planned window of `frames` in window order.
pub fn caption_video(
    frames: &[MediaRef],
    question: &QuestionRecord,
    backend: &dyn ModelBackend,
    settings: &CaptionSettings,
) -> Result<Vec<Caption>, CaptionError> {
    if frames.is_empty() {
        return Err(CaptionError::NoFrames);
    }
    let windows = plan_windows(frames.len() as u32, settings.window_size, settings.overlap)?;
    let keywords = keywords_for(question, settings);
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| caption_window(frames, i, w, &keywords, settings, backend))
        .collect()
}
