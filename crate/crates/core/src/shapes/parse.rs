use std::collections::HashMap;

use super::attributes::Category;
use super::caption::{relevant_slots, AttributeBins, Captioner, GrammarTrace, RotationBin, GRID};
use super::grammar::{slot, Aspect, N_SLOTS};
use super::ShapesError;

/// Descriptor carried by one sentence segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Head { category: Category, shape_word: u8 },
    Location((u8, u8)),
    Size(u8),
    Color(u16),
    Rotation(RotationBin),
}

impl Part {
    pub fn aspect(self) -> Option<Aspect> {
        match self {
            Part::Head { .. } => None,
            Part::Location(_) => Some(Aspect::Location),
            Part::Size(_) => Some(Aspect::Size),
            Part::Color(_) => Some(Aspect::Color),
            Part::Rotation(_) => Some(Aspect::Rotation),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    part: Part,
    /// Trace slots pinned by this segment, text-relevant ones only.
    choices: Vec<(usize, u8)>,
}

/// Inverts [`Captioner::render`] by table lookup over every phrase the
/// grammar can produce.
#[derive(Clone, Debug)]
pub struct CaptionParser {
    heads: HashMap<String, Entry>,
    phrases: HashMap<String, Entry>,
    connectors: Vec<Vec<String>>,
    endings: Vec<String>,
    order_index: HashMap<[Aspect; 4], u8>,
    max_len: usize,
}

fn placeholder_bins() -> AttributeBins {
    AttributeBins {
        category: Category::Egg,
        shape_word: 0,
        location: (0, 0),
        size_class: 0,
        rotation: RotationBin::Cardinal(0),
        color: 0,
    }
}

/// Every assignment of the listed slots, as full traces with other slots 0.
fn product(slots: &[usize], arities: &[usize; N_SLOTS], base: GrammarTrace) -> Vec<GrammarTrace> {
    let mut out = vec![base];
    for &s in slots {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..arities[s]).map(move |c| {
                    let mut t2 = t;
                    t2.0[s] = c as u8;
                    t2
                })
            })
            .collect();
    }
    out
}

impl CaptionParser {
    pub fn new(cap: &Captioner) -> Result<Self, ShapesError> {
        let g = &cap.grammar;
        let ar = g.arities();
        let mut heads = HashMap::new();
        let mut phrases = HashMap::new();

        let insert = |table: &mut HashMap<String, Entry>,
                      text: String,
                      bins: &AttributeBins,
                      trace: &GrammarTrace,
                      part: Part,
                      slots: &[usize]| {
            let keep = relevant_slots(bins, trace, g);
            let choices: Vec<(usize, u8)> = slots.iter().filter(|&&s| keep[s]).map(|&s| (s, trace.0[s])).collect();
            let entry = Entry { part, choices };
            match table.get(&text) {
                Some(prev) if *prev != entry => Err(ShapesError::Asset(format!(
                    "grammar is ambiguous: {text:?} means both {:?} and {:?}",
                    prev.part, entry.part
                ))),
                Some(_) => Ok(()),
                None => {
                    table.insert(text, entry);
                    Ok(())
                }
            }
        };

        for category in Category::ALL {
            let word_slot = slot::SHAPE_WORD[category.index()];
            for w in 0..ar[word_slot] as u8 {
                let bins = AttributeBins { category, shape_word: w, ..placeholder_bins() };
                let mut base = GrammarTrace([0; N_SLOTS]);
                base.0[word_slot] = w;
                let slots = [slot::OPENING, slot::DETERMINER, slot::SHAPE_ADJECTIVE, word_slot];
                for t in product(&slots[..3], &ar, base) {
                    let part = Part::Head { category, shape_word: w };
                    insert(&mut heads, cap.head(&bins, &t), &bins, &t, part, &slots)?;
                }
            }
        }

        let mut add_phrases = |aspect: Aspect,
                               part: Part,
                               bins: AttributeBins,
                               slots: &[usize],
                               base: GrammarTrace|
         -> Result<(), ShapesError> {
            for t in product(slots, &ar, base) {
                insert(&mut phrases, cap.phrase(aspect, &bins, &t), &bins, &t, part, slots)?;
            }
            Ok(())
        };
        let zero = GrammarTrace([0; N_SLOTS]);
        for r in 0..GRID as u8 {
            for c in 0..GRID as u8 {
                let bins = AttributeBins { location: (r, c), ..placeholder_bins() };
                let slots = [
                    slot::LOCATION_SUBJECT,
                    slot::LOCATION_VERB,
                    slot::LOCATION_HEDGE,
                    slot::LOCATION_STYLE,
                    slot::CENTER_WORD,
                ];
                add_phrases(Aspect::Location, Part::Location((r, c)), bins, &slots, zero)?;
            }
        }
        for class in 0..4u8 {
            let bins = AttributeBins { size_class: class, ..placeholder_bins() };
            let slots = [slot::SIZE_SUBJECT, slot::SIZE_FRAME, slot::SIZE_ADVERB, slot::SIZE_WORD[class as usize]];
            add_phrases(Aspect::Size, Part::Size(class), bins, &slots, zero)?;
        }
        for color in 0..cap.colors.len() as u16 {
            let bins = AttributeBins { color, ..placeholder_bins() };
            let slots = [slot::COLOR_SUBJECT, slot::COLOR_FRAME, slot::COLOR_HEDGE, slot::COLOUR_SPELLING];
            add_phrases(Aspect::Color, Part::Color(color), bins, &slots, zero)?;
        }
        let mut rotations: Vec<RotationBin> = (0..16).map(RotationBin::Cardinal).collect();
        rotations.extend((0..16).map(RotationBin::Corner));
        rotations.extend((0..72).map(|k| RotationBin::Degrees(k * 5)));
        for rot in rotations {
            let bins = AttributeBins { rotation: rot, ..placeholder_bins() };
            let (style, extra): (u8, &[usize]) = match rot {
                RotationBin::Cardinal(_) => (0, &[slot::CARDINAL_FRAME, slot::CARDINAL_FORMAT, slot::ROTATION_HEDGE]),
                RotationBin::Corner(_) => (1, &[slot::CORNER_FRAME, slot::CORNER_FORMAT, slot::ROTATION_HEDGE]),
                RotationBin::Degrees(_) => {
                    (2, &[slot::DEGREE_FRAME, slot::DEGREE_DIRECTION, slot::DEGREE_UNIT, slot::DEGREE_HEDGE])
                }
            };
            let mut base = zero;
            base.0[slot::ROTATION_STYLE] = style;
            let mut slots = vec![slot::ROTATION_SUBJECT, slot::ROTATION_STYLE];
            let varying: Vec<usize> = std::iter::once(slot::ROTATION_SUBJECT).chain(extra.iter().copied()).collect();
            slots.extend_from_slice(extra);
            for t in product(&varying, &ar, base) {
                insert(&mut phrases, cap.phrase(Aspect::Rotation, &bins, &t), &bins, &t, Part::Rotation(rot), &slots)?;
            }
        }

        let connectors: Vec<Vec<String>> =
            slot::CONNECTOR.iter().map(|&s| (0..ar[s] as u8).map(|c| g.option(s, c).to_string()).collect()).collect();
        let endings: Vec<String> = (0..ar[slot::ENDING] as u8).map(|c| g.option(slot::ENDING, c).to_string()).collect();
        let order_index = (0..ar[slot::ORDER] as u8).map(|i| (g.order(i), i)).collect();

        let longest = |it: &mut dyn Iterator<Item = usize>| it.max().unwrap_or(0);
        let mut max_len = longest(&mut heads.keys().map(String::len));
        for aspect in Aspect::ALL {
            max_len +=
                longest(&mut phrases.iter().filter(|(_, e)| e.part.aspect() == Some(aspect)).map(|(k, _)| k.len()));
        }
        max_len += connectors.iter().map(|c| c.iter().map(String::len).max().unwrap_or(0)).sum::<usize>();
        max_len += endings.iter().map(String::len).max().unwrap_or(0);

        Ok(Self { heads, phrases, connectors, endings, order_index, max_len })
    }

    /// Upper bound on the byte length of any sentence the grammar produces.
    pub fn max_caption_len(&self) -> usize {
        self.max_len
    }

    pub fn phrase_count(&self) -> usize {
        self.phrases.len()
    }

    /// Looks up a single attribute phrase such as `"it's in the center"`.
    pub fn parse_phrase(&self, text: &str) -> Option<Part> {
        self.phrases.get(text).map(|e| e.part)
    }

    /// Recovers the bins and the text-relevant trace entries of a sentence.
    pub fn parse(&self, text: &str) -> Result<(AttributeBins, GrammarTrace), ShapesError> {
        let mut furthest = 0;
        let mut heads: Vec<(&String, &Entry)> =
            self.heads.iter().filter(|(h, _)| text.starts_with(h.as_str())).collect();
        heads.sort_by_key(|(h, _)| std::cmp::Reverse(h.len()));
        for (h, head) in heads {
            furthest = furthest.max(h.len());
            let mut stack = Vec::with_capacity(4);
            if let Some(found) = self.segments(text, h.len(), &mut stack, &mut furthest) {
                return Ok(self.assemble(head, &found));
            }
        }
        Err(ShapesError::Parse { offset: furthest, message: "unrecognized phrase".into() })
    }

    fn segments<'a>(
        &'a self,
        text: &str,
        pos: usize,
        stack: &mut Vec<(u8, &'a Entry)>,
        furthest: &mut usize,
    ) -> Option<(Vec<(u8, &'a Entry)>, u8)> {
        let k = stack.len();
        if k == 4 {
            let rest = &text[pos..];
            return self.endings.iter().position(|e| e == rest).map(|e| (stack.clone(), e as u8));
        }
        for (ci, conn) in self.connectors[k].iter().enumerate() {
            if !text[pos..].starts_with(conn.as_str()) {
                continue;
            }
            let start = pos + conn.len();
            *furthest = (*furthest).max(start);
            for end in start + 1..=text.len() {
                if !text.is_char_boundary(end) || !self.is_boundary(&text[end..]) {
                    continue;
                }
                let Some(entry) = self.phrases.get(&text[start..end]) else { continue };
                if stack.iter().any(|(_, e)| e.part.aspect() == entry.part.aspect()) {
                    continue;
                }
                stack.push((ci as u8, entry));
                if let Some(found) = self.segments(text, end, stack, furthest) {
                    return Some(found);
                }
                stack.pop();
            }
        }
        None
    }

    fn is_boundary(&self, rest: &str) -> bool {
        self.endings.iter().any(|e| e == rest) || self.connectors.iter().flatten().any(|c| rest.starts_with(c.as_str()))
    }

    fn assemble(&self, head: &Entry, (segs, ending): &(Vec<(u8, &Entry)>, u8)) -> (AttributeBins, GrammarTrace) {
        let mut bins = AttributeBins {
            category: Category::Egg,
            shape_word: 0,
            location: (0, 0),
            size_class: 0,
            rotation: RotationBin::Cardinal(0),
            color: 0,
        };
        let mut trace = GrammarTrace([0; N_SLOTS]);
        let mut order = [Aspect::Location; 4];
        for (k, entry) in std::iter::once(head).chain(segs.iter().map(|(_, e)| *e)).enumerate() {
            for &(s, c) in &entry.choices {
                trace.0[s] = c;
            }
            match entry.part {
                Part::Head { category, shape_word } => {
                    bins.category = category;
                    bins.shape_word = shape_word;
                }
                Part::Location(cell) => bins.location = cell,
                Part::Size(c) => bins.size_class = c,
                Part::Color(c) => bins.color = c,
                Part::Rotation(r) => bins.rotation = r,
            }
            if k > 0 {
                order[k - 1] = entry.part.aspect().expect("segments are attributes");
            }
        }
        for (k, (conn, _)) in segs.iter().enumerate() {
            trace.0[slot::CONNECTOR[k]] = *conn;
        }
        trace.0[slot::ORDER] = self.order_index[&order];
        trace.0[slot::ENDING] = *ending;
        (bins, trace)
    }
}
