//! PubMed baseline ingestion into a line-delimited canonical corpus.
//!
//! Input files are split into `<PubmedArticle>` records with a byte-level
//! scanner, so a corrupted record only costs that record. Records are parsed
//! in parallel batches and merged sequentially, which keeps the last-wins
//! duplicate rule tied to stream order.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: invalid record (pmid {pmid:?}): {reason}")]
    InvalidRecord {
        line: usize,
        pmid: String,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One PubMed record: the indexing unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub pmid: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

impl Document {
    pub fn new(pmid: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Self {
            pmid: pmid.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
        }
    }

    /// Checks the per-record invariants (uniqueness is a file-level check).
    pub fn validate(&self) -> Result<(), String> {
        if self.pmid.is_empty() {
            return Err("empty pmid".into());
        }
        if !self.pmid.bytes().all(|b| b.is_ascii_digit()) {
            return Err("pmid is not all decimal digits".into());
        }
        if self.abstract_text.trim().is_empty() {
            return Err("empty abstract".into());
        }
        Ok(())
    }

    /// `title + " " + abstract`, or the abstract alone when the title is empty.
    pub fn title_and_abstract(&self) -> String {
        if self.title.is_empty() {
            self.abstract_text.clone()
        } else {
            format!("{} {}", self.title, self.abstract_text)
        }
    }
}

/// Funnel counts for one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_seen: u64,
    pub kept: u64,
    pub dropped_no_abstract: u64,
    pub dropped_duplicate: u64,
    pub dropped_malformed: u64,
    /// Kept records whose title is empty.
    pub empty_titles: u64,
}

impl IngestReport {
    pub fn reconciles(&self) -> bool {
        self.records_seen
            == self.kept + self.dropped_no_abstract + self.dropped_duplicate + self.dropped_malformed
    }
}

const START: &[u8] = b"<PubmedArticle";
const END: &[u8] = b"</PubmedArticle>";
const READ_CHUNK: usize = 1 << 16;
const PARSE_BATCH: usize = 2048;

/// Splits a byte stream into raw `<PubmedArticle>` record texts. A record
/// that is cut short (a new record starts before it closes, or the stream
/// ends) is yielded as-is and fails parsing downstream.
struct RecordSplitter<R> {
    reader: R,
    buf: Vec<u8>,
    eof: bool,
}

fn find(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if hay.len() < needle.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i] == needle[0] && &hay[i..i + needle.len()] == needle)
}

/// Position of the next record start tag at or after `from`. `None` when
/// there is none yet, or when a candidate sits too close to the end of the
/// buffer to tell it apart from `<PubmedArticleSet`.
fn find_start(buf: &[u8], from: usize, eof: bool) -> Option<usize> {
    let mut at = from;
    while let Some(i) = find(buf, START, at) {
        match buf.get(i + START.len()) {
            Some(b'>' | b' ' | b'\t' | b'\r' | b'\n' | b'/') => return Some(i),
            Some(_) => at = i + 1,
            None if eof => return None,
            None => return None,
        }
    }
    None
}

impl<R: Read> RecordSplitter<R> {
    fn new(reader: R) -> Self {
        Self {
            reader,
            buf: Vec::new(),
            eof: false,
        }
    }

    fn fill(&mut self) -> io::Result<()> {
        let mut chunk = vec![0u8; READ_CHUNK];
        let n = self.reader.read(&mut chunk)?;
        if n == 0 {
            self.eof = true;
        } else {
            self.buf.extend_from_slice(&chunk[..n]);
        }
        Ok(())
    }

    fn next_record(&mut self) -> io::Result<Option<Vec<u8>>> {
        loop {
            match find_start(&self.buf, 0, self.eof) {
                Some(s) => {
                    self.buf.drain(..s);
                    break;
                }
                None if self.eof => {
                    self.buf.clear();
                    return Ok(None);
                }
                None => {
                    let keep = START.len();
                    if self.buf.len() > keep {
                        self.buf.drain(..self.buf.len() - keep);
                    }
                    self.fill()?;
                }
            }
        }
        // buf now begins with a record start tag.
        let mut scanned = 1;
        loop {
            let end = find(&self.buf, END, scanned);
            let next = find_start(&self.buf, 1, self.eof);
            match (end, next) {
                (Some(e), Some(n)) if n < e => return Ok(Some(self.buf.drain(..n).collect())),
                (Some(e), _) => return Ok(Some(self.buf.drain(..e + END.len()).collect())),
                (None, Some(n)) => return Ok(Some(self.buf.drain(..n).collect())),
                (None, None) if self.eof => return Ok(Some(std::mem::take(&mut self.buf))),
                (None, None) => {
                    scanned = self.buf.len().saturating_sub(END.len()).max(1);
                    self.fill()?;
                }
            }
        }
    }
}

#[derive(Debug)]
enum Parsed {
    Doc(Document),
    NoAbstract,
    Malformed(String),
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses one raw record.
fn parse_record(raw: &[u8]) -> Parsed {
    let text = match std::str::from_utf8(raw) {
        Ok(t) => t,
        Err(e) => return Parsed::Malformed(format!("invalid utf-8: {e}")),
    };
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(false);

    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut pmid: Option<String> = None;
    let mut reading_pmid = false;
    let mut pmid_buf = String::new();
    let mut title = String::new();
    let mut sections: Vec<String> = Vec::new();
    let mut title_depth: Option<usize> = None;
    let mut abstract_depth: Option<usize> = None;
    let mut root_closed = false;

    loop {
        let event = match reader.read_event() {
            Ok(ev) => ev,
            Err(e) => return Parsed::Malformed(e.to_string()),
        };
        match event {
            Event::Start(e) => {
                if root_closed {
                    return Parsed::Malformed("content after record end".into());
                }
                let name = e.name().as_ref().to_vec();
                if stack.is_empty() && name != b"PubmedArticle" {
                    return Parsed::Malformed("record does not start with PubmedArticle".into());
                }
                match name.as_slice() {
                    b"PMID" if pmid.is_none() && !reading_pmid => {
                        reading_pmid = true;
                        pmid_buf.clear();
                    }
                    b"ArticleTitle" if title_depth.is_none() => title_depth = Some(stack.len()),
                    b"AbstractText" if abstract_depth.is_none() => {
                        abstract_depth = Some(stack.len());
                        sections.push(String::new());
                    }
                    _ => {}
                }
                stack.push(name);
            }
            Event::End(e) => {
                let name = e.name().as_ref().to_vec();
                match stack.pop() {
                    Some(open) if open == name => {}
                    _ => return Parsed::Malformed("mismatched end tag".into()),
                }
                let depth = stack.len();
                if name == b"PMID" && reading_pmid {
                    reading_pmid = false;
                    pmid = Some(pmid_buf.trim().to_string());
                }
                if title_depth == Some(depth) {
                    title_depth = None;
                }
                if abstract_depth == Some(depth) {
                    abstract_depth = None;
                }
                if depth == 0 {
                    root_closed = true;
                }
            }
            Event::Text(t) => {
                let s = match t.unescape() {
                    Ok(s) => s,
                    Err(e) => return Parsed::Malformed(e.to_string()),
                };
                if reading_pmid {
                    pmid_buf.push_str(&s);
                }
                if title_depth.is_some() {
                    title.push_str(&s);
                }
                if abstract_depth.is_some() {
                    if let Some(last) = sections.last_mut() {
                        last.push_str(&s);
                    }
                }
            }
            Event::CData(t) => {
                let s = String::from_utf8_lossy(&t).into_owned();
                if title_depth.is_some() {
                    title.push_str(&s);
                }
                if abstract_depth.is_some() {
                    if let Some(last) = sections.last_mut() {
                        last.push_str(&s);
                    }
                }
            }
            Event::Empty(_) if stack.is_empty() => {
                return Parsed::Malformed("empty record element".into());
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !root_closed || !stack.is_empty() {
        return Parsed::Malformed("record is truncated".into());
    }
    let pmid = match pmid {
        Some(p) if !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()) => p,
        Some(p) => return Parsed::Malformed(format!("invalid PMID {p:?}")),
        None => return Parsed::Malformed("missing PMID".into()),
    };
    let abstract_text = sections
        .iter()
        .map(|s| collapse_ws(s))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    if abstract_text.is_empty() {
        return Parsed::NoAbstract;
    }
    Parsed::Doc(Document {
        pmid,
        title: collapse_ws(&title),
        abstract_text,
    })
}

/// Last-wins accumulator keyed on stream order.
#[derive(Default)]
struct Merger {
    slots: Vec<Option<Document>>,
    by_pmid: HashMap<String, usize>,
    report: IngestReport,
}

impl Merger {
    fn push(&mut self, parsed: Parsed) {
        self.report.records_seen += 1;
        match parsed {
            Parsed::Malformed(reason) => {
                log::debug!("skipping malformed record: {reason}");
                self.report.dropped_malformed += 1;
            }
            Parsed::NoAbstract => self.report.dropped_no_abstract += 1,
            Parsed::Doc(doc) => {
                let slot = self.slots.len();
                if let Some(prev) = self.by_pmid.insert(doc.pmid.clone(), slot) {
                    self.slots[prev] = None;
                    self.report.dropped_duplicate += 1;
                }
                self.slots.push(Some(doc));
            }
        }
    }

    fn finish(mut self) -> (Vec<Document>, IngestReport) {
        let docs: Vec<Document> = self.slots.into_iter().flatten().collect();
        self.report.kept = docs.len() as u64;
        self.report.empty_titles = docs.iter().filter(|d| d.title.is_empty()).count() as u64;
        if self.report.empty_titles > 0 {
            log::warn!("{} kept records have an empty title", self.report.empty_titles);
        }
        (docs, self.report)
    }
}

fn ingest_stream<R: Read>(reader: R, merger: &mut Merger, exec: Execution) -> io::Result<()> {
    let mut splitter = RecordSplitter::new(reader);
    let mut batch = Vec::with_capacity(PARSE_BATCH);
    loop {
        let rec = splitter.next_record()?;
        let done = rec.is_none();
        if let Some(r) = rec {
            batch.push(r);
        }
        if batch.len() >= PARSE_BATCH || (done && !batch.is_empty()) {
            for parsed in par::map(exec, &batch, |r| parse_record(r)) {
                merger.push(parsed);
            }
            batch.clear();
        }
        if done {
            return Ok(());
        }
    }
}

/// Ingests XML streams in order and writes the surviving documents to `sink`.
pub fn ingest_xml<R, I, W>(inputs: I, sink: W, exec: Execution) -> Result<IngestReport, CorpusError>
where
    R: Read,
    I: IntoIterator<Item = R>,
    W: Write,
{
    let mut merger = Merger::default();
    for input in inputs {
        ingest_stream(input, &mut merger, exec).map_err(|source| CorpusError::Io {
            path: "<input>".into(),
            source,
        })?;
    }
    let (docs, report) = merger.finish();
    write_documents(sink, &docs).map_err(|source| CorpusError::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(report)
}

/// Opens a plain or gzip-compressed XML file (detected by magic bytes).
pub fn open_xml(path: &Path) -> Result<Box<dyn Read + Send>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(io_err(path))?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(MultiGzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

/// Expands directories into their `.xml` / `.gz` files, sorted by name.
pub fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.is_file()
                        && f.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.ends_with(".xml") || n.ends_with(".gz"))
                })
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// File-to-file ingestion used by the CLI.
pub fn ingest_paths(inputs: &[PathBuf], out: &Path, exec: Execution) -> Result<IngestReport, CorpusError> {
    let files = expand_inputs(inputs)?;
    let mut merger = Merger::default();
    for f in &files {
        let reader = open_xml(f)?;
        ingest_stream(reader, &mut merger, exec).map_err(io_err(f))?;
    }
    let (docs, report) = merger.finish();
    let sink = File::create(out).map_err(io_err(out))?;
    write_documents(sink, &docs).map_err(io_err(out))?;
    Ok(report)
}

pub fn write_documents<W: Write>(sink: W, docs: &[Document]) -> io::Result<()> {
    let mut out = BufWriter::new(sink);
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Validating reader over a canonical corpus file.
pub struct CorpusReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
    path: String,
    failed: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
            path: "<corpus>".into(),
            failed: false,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(source) => {
                    self.failed = true;
                    return Some(Err(CorpusError::Io {
                        path: self.path.clone(),
                        source,
                    }));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let result = match serde_json::from_str::<Document>(&line) {
                Err(e) => Err(CorpusError::InvalidRecord {
                    line: self.line_no,
                    pmid: String::new(),
                    reason: e.to_string(),
                }),
                Ok(doc) => match doc.validate() {
                    Err(reason) => Err(CorpusError::InvalidRecord {
                        line: self.line_no,
                        pmid: doc.pmid,
                        reason,
                    }),
                    Ok(()) if !self.seen.insert(doc.pmid.clone()) => Err(CorpusError::InvalidRecord {
                        line: self.line_no,
                        pmid: doc.pmid,
                        reason: "duplicate pmid".into(),
                    }),
                    Ok(()) => Ok(doc),
                },
            };
            if result.is_err() {
                self.failed = true;
            }
            return Some(result);
        }
    }
}

pub fn read_corpus(path: &Path) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = CorpusReader::new(BufReader::new(file));
    reader.path = path.display().to_string();
    Ok(reader)
}

/// Reads a whole corpus file into memory.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    read_corpus(path)?.collect()
}

/// pmid → document lookup used by the re-rankers and dataset tooling.
pub type CorpusMap = HashMap<String, Document>;

pub fn corpus_map(docs: impl IntoIterator<Item = Document>) -> CorpusMap {
    docs.into_iter().map(|d| (d.pmid.clone(), d)).collect()
}
