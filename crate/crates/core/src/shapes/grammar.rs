use serde::Deserialize;

use super::ShapesError;

pub const GRAMMAR_TOML: &str = include_str!("../../assets/grammar.toml");

/// Number of choices the caption generator records per sentence.
pub const N_SLOTS: usize = 39;

pub const SLOT_NAMES: [&str; N_SLOTS] = [
    "order",
    "opening",
    "determiner",
    "shape_adjective",
    "egg_word",
    "triangle_word",
    "diamond_word",
    "connector_1",
    "connector_2",
    "connector_3",
    "connector_4",
    "location_subject",
    "location_verb",
    "location_style",
    "center_word",
    "size_subject",
    "size_frame",
    "size_adverb",
    "tiny_word",
    "small_word",
    "medium_word",
    "large_word",
    "color_subject",
    "color_frame",
    "color_hedge",
    "rotation_subject",
    "rotation_style",
    "cardinal_frame",
    "cardinal_format",
    "corner_frame",
    "corner_format",
    "degree_frame",
    "degree_direction",
    "degree_unit",
    "ending",
    "location_hedge",
    "rotation_hedge",
    "colour_spelling",
    "degree_hedge",
];

/// Slot indices, matching [`SLOT_NAMES`].
pub mod slot {
    pub const ORDER: usize = 0;
    pub const OPENING: usize = 1;
    pub const DETERMINER: usize = 2;
    pub const SHAPE_ADJECTIVE: usize = 3;
    pub const SHAPE_WORD: [usize; 3] = [4, 5, 6];
    pub const CONNECTOR: [usize; 4] = [7, 8, 9, 10];
    pub const LOCATION_SUBJECT: usize = 11;
    pub const LOCATION_VERB: usize = 12;
    pub const LOCATION_STYLE: usize = 13;
    pub const CENTER_WORD: usize = 14;
    pub const SIZE_SUBJECT: usize = 15;
    pub const SIZE_FRAME: usize = 16;
    pub const SIZE_ADVERB: usize = 17;
    pub const SIZE_WORD: [usize; 4] = [18, 19, 20, 21];
    pub const COLOR_SUBJECT: usize = 22;
    pub const COLOR_FRAME: usize = 23;
    pub const COLOR_HEDGE: usize = 24;
    pub const ROTATION_SUBJECT: usize = 25;
    pub const ROTATION_STYLE: usize = 26;
    pub const CARDINAL_FRAME: usize = 27;
    pub const CARDINAL_FORMAT: usize = 28;
    pub const CORNER_FRAME: usize = 29;
    pub const CORNER_FORMAT: usize = 30;
    pub const DEGREE_FRAME: usize = 31;
    pub const DEGREE_DIRECTION: usize = 32;
    pub const DEGREE_UNIT: usize = 33;
    pub const ENDING: usize = 34;
    pub const LOCATION_HEDGE: usize = 35;
    pub const ROTATION_HEDGE: usize = 36;
    pub const COLOUR_SPELLING: usize = 37;
    pub const DEGREE_HEDGE: usize = 38;
}

/// The four verbalized attributes besides the shape itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aspect {
    Location,
    Size,
    Color,
    Rotation,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [Aspect::Location, Aspect::Size, Aspect::Color, Aspect::Rotation];

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "location" => Some(Aspect::Location),
            "size" => Some(Aspect::Size),
            "color" => Some(Aspect::Color),
            "rotation" => Some(Aspect::Rotation),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawSlot {
    name: String,
    options: Vec<String>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Tables {
    pub rows: Vec<Vec<String>>,
    pub cols: Vec<Vec<String>>,
    pub cardinal_long: Vec<String>,
    pub cardinal_abbreviation: Vec<String>,
    pub corners: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawGrammar {
    slot: Vec<RawSlot>,
    tables: Tables,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    options: Vec<Vec<String>>,
    orders: Vec<[Aspect; 4]>,
    pub tables: Tables,
}

impl Grammar {
    pub fn builtin() -> Self {
        Self::parse(GRAMMAR_TOML).expect("shipped grammar is well formed")
    }

    pub fn parse(text: &str) -> Result<Self, ShapesError> {
        let raw: RawGrammar = toml::from_str(text).map_err(|e| ShapesError::Asset(format!("grammar: {e}")))?;
        let names: Vec<&str> = raw.slot.iter().map(|s| s.name.as_str()).collect();
        if names != SLOT_NAMES {
            return Err(ShapesError::Asset(format!("grammar slots must be exactly {SLOT_NAMES:?}, found {names:?}")));
        }
        if let Some(s) = raw.slot.iter().find(|s| s.options.is_empty()) {
            return Err(ShapesError::Asset(format!("grammar slot {} has no options", s.name)));
        }
        let mut orders = Vec::new();
        for o in &raw.slot[slot::ORDER].options {
            let parsed: Option<Vec<Aspect>> = o.split_whitespace().map(Aspect::from_name).collect();
            let bad = || ShapesError::Asset(format!("bad attribute order {o:?}"));
            let parsed = parsed.ok_or_else(bad)?;
            let arr: [Aspect; 4] = parsed.try_into().map_err(|_| bad())?;
            let mut sorted = arr;
            sorted.sort();
            if sorted != Aspect::ALL || arr[0] == Aspect::Rotation {
                return Err(bad());
            }
            orders.push(arr);
        }
        let t = &raw.tables;
        let ok = t.rows.len() == 3
            && t.cols.len() == 3
            && t.rows.iter().chain(&t.cols).all(|r| r.len() == 7)
            && t.cardinal_long.len() == 16
            && t.cardinal_abbreviation.len() == 16
            && t.corners.len() == 16
            && raw.slot[slot::LOCATION_STYLE].options.len() == 3
            && raw.slot[slot::ROTATION_STYLE].options.len() == 3;
        if !ok {
            return Err(ShapesError::Asset("grammar tables have the wrong shape".into()));
        }
        Ok(Self { options: raw.slot.into_iter().map(|s| s.options).collect(), orders, tables: raw.tables })
    }

    pub fn arity(&self, slot: usize) -> usize {
        self.options[slot].len()
    }

    pub fn arities(&self) -> [usize; N_SLOTS] {
        std::array::from_fn(|i| self.arity(i))
    }

    pub fn option(&self, slot: usize, choice: u8) -> &str {
        &self.options[slot][choice as usize]
    }

    pub fn order(&self, choice: u8) -> [Aspect; 4] {
        self.orders[choice as usize]
    }

    pub fn order_index(&self, order: [Aspect; 4]) -> Option<u8> {
        self.orders.iter().position(|o| *o == order).map(|i| i as u8)
    }
}
