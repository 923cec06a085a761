use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attributes::{Attributes, Category};
use super::colors::ColorTable;
use super::grammar::{slot, Aspect, Grammar, N_SLOTS};
use super::ShapeConfig;

pub const GRID: usize = 7;
pub const SIZE_CLASSES: [&str; 4] = ["tiny", "small", "medium", "large"];
const CENTER: (u8, u8) = (3, 3);

/// Rotation descriptor actually used in a sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationBin {
    /// One of 16 compass sectors, counterclockwise from north.
    Cardinal(u8),
    /// Same sectors, named after image edges and corners.
    Corner(u8),
    /// Counterclockwise angle rounded to a multiple of 5, in `[0, 360)`.
    Degrees(u16),
}

/// Quantized descriptors verbalized by a caption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeBins {
    pub category: Category,
    /// Synonym index within the category's word list.
    pub shape_word: u8,
    /// Grid cell as (row, col), row 0 at the top.
    pub location: (u8, u8),
    pub size_class: u8,
    pub rotation: RotationBin,
    pub color: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GrammarTrace(pub [u8; N_SLOTS]);

impl GrammarTrace {
    /// Copy with every choice that does not reach the text reset to 0.
    pub fn canonical(&self, bins: &AttributeBins, grammar: &Grammar) -> GrammarTrace {
        let keep = relevant_slots(bins, self, grammar);
        GrammarTrace(std::array::from_fn(|i| if keep[i] { self.0[i] } else { 0 }))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Caption {
    pub text: String,
    pub trace: GrammarTrace,
    pub bins: AttributeBins,
}

pub fn location_cell(x: f64, y: f64, side: usize) -> (u8, u8) {
    let cell = |v: f64| ((v * GRID as f64 / side as f64).floor().clamp(0.0, (GRID - 1) as f64)) as u8;
    (cell(y), cell(x))
}

pub fn size_class(size: f64, cfg: &ShapeConfig) -> u8 {
    let q = ((size - cfg.s_min) / (cfg.s_max - cfg.s_min) * 4.0).floor();
    q.clamp(0.0, 3.0) as u8
}

/// Compass sector whose 22.5° wedge contains the angle.
pub fn sector16(rotation: f64) -> u8 {
    ((rotation.rem_euclid(TAU) / (TAU / 16.0)).round() as u32 % 16) as u8
}

/// Angle in degrees rounded to the closest multiple of 5, in `[0, 360)`.
pub fn degrees5(rotation: f64) -> u16 {
    let deg = rotation.rem_euclid(TAU).to_degrees();
    (((deg / 5.0).round() as u32 * 5) % 360) as u16
}

/// Which trace entries influence the text.
pub fn relevant_slots(bins: &AttributeBins, trace: &GrammarTrace, grammar: &Grammar) -> [bool; N_SLOTS] {
    let mut keep = [false; N_SLOTS];
    for s in [
        slot::ORDER,
        slot::OPENING,
        slot::DETERMINER,
        slot::SHAPE_ADJECTIVE,
        slot::LOCATION_SUBJECT,
        slot::LOCATION_VERB,
        slot::LOCATION_HEDGE,
        slot::SIZE_SUBJECT,
        slot::SIZE_FRAME,
        slot::SIZE_ADVERB,
        slot::COLOR_SUBJECT,
        slot::COLOR_FRAME,
        slot::COLOR_HEDGE,
        slot::ROTATION_SUBJECT,
        slot::ROTATION_STYLE,
        slot::ENDING,
    ] {
        keep[s] = true;
    }
    for s in slot::CONNECTOR {
        keep[s] = true;
    }
    keep[slot::SHAPE_WORD[bins.category.index()]] = true;
    keep[slot::SIZE_WORD[bins.size_class as usize]] = true;
    if bins.location == CENTER {
        keep[slot::CENTER_WORD] = true;
    } else {
        keep[slot::LOCATION_STYLE] = true;
    }
    if trace.0[slot::COLOR_FRAME] != 0 {
        keep[slot::COLOUR_SPELLING] = true;
    }
    match bins.rotation {
        RotationBin::Cardinal(_) => {
            keep[slot::CARDINAL_FRAME] = true;
            keep[slot::CARDINAL_FORMAT] = true;
            keep[slot::ROTATION_HEDGE] = true;
        }
        RotationBin::Corner(k) => {
            keep[slot::CORNER_FRAME] = true;
            keep[slot::ROTATION_HEDGE] = true;
            if grammar.tables.corners[k as usize].contains('-') {
                keep[slot::CORNER_FORMAT] = true;
            }
        }
        RotationBin::Degrees(_) => {
            keep[slot::DEGREE_FRAME] = true;
            keep[slot::DEGREE_DIRECTION] = true;
            keep[slot::DEGREE_UNIT] = true;
            keep[slot::DEGREE_HEDGE] = true;
        }
    }
    keep
}

/// Renders captions from bins and traces, and draws new ones.
#[derive(Clone, Debug)]
pub struct Captioner {
    pub grammar: Grammar,
    pub colors: ColorTable,
    pub config: ShapeConfig,
}

impl Captioner {
    pub fn new(grammar: Grammar, colors: ColorTable, config: ShapeConfig) -> Self {
        Self { grammar, colors, config }
    }

    pub fn builtin(config: ShapeConfig) -> Self {
        Self::new(Grammar::builtin(), ColorTable::builtin(), config)
    }

    /// Draws one choice per slot, in slot order.
    pub fn draw_trace<R: Rng + ?Sized>(&self, rng: &mut R) -> GrammarTrace {
        let ar = self.grammar.arities();
        GrammarTrace(std::array::from_fn(|i| rng.random_range(0..ar[i]) as u8))
    }

    pub fn bins_for(&self, a: &Attributes, trace: &GrammarTrace) -> AttributeBins {
        let rotation = match trace.0[slot::ROTATION_STYLE] {
            0 => RotationBin::Cardinal(sector16(a.rotation)),
            1 => RotationBin::Corner(sector16(a.rotation)),
            _ => RotationBin::Degrees(degrees5(a.rotation)),
        };
        AttributeBins {
            category: a.category,
            shape_word: trace.0[slot::SHAPE_WORD[a.category.index()]],
            location: location_cell(a.x, a.y, self.config.image_size),
            size_class: size_class(a.size, &self.config),
            rotation,
            color: self.colors.nearest(a.rgb_bytes()) as u16,
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, a: &Attributes, rng: &mut R) -> Caption {
        let trace = self.draw_trace(rng);
        let bins = self.bins_for(a, &trace);
        Caption { text: self.render(&bins, &trace), trace, bins }
    }

    pub fn render(&self, bins: &AttributeBins, trace: &GrammarTrace) -> String {
        let mut out = self.head(bins, trace);
        for (k, aspect) in self.grammar.order(trace.0[slot::ORDER]).into_iter().enumerate() {
            out.push_str(self.grammar.option(slot::CONNECTOR[k], trace.0[slot::CONNECTOR[k]]));
            out.push_str(&self.phrase(aspect, bins, trace));
        }
        out.push_str(self.grammar.option(slot::ENDING, trace.0[slot::ENDING]));
        out
    }

    /// Opening words through the shape noun.
    pub fn head(&self, bins: &AttributeBins, trace: &GrammarTrace) -> String {
        let g = &self.grammar;
        let t = &trace.0;
        let noun = format!(
            "{}{}",
            g.option(slot::SHAPE_ADJECTIVE, t[slot::SHAPE_ADJECTIVE]),
            g.option(slot::SHAPE_WORD[bins.category.index()], bins.shape_word)
        );
        let mut det = g.option(slot::DETERMINER, t[slot::DETERMINER]).to_string();
        if det == "a" && noun.starts_with(['a', 'e', 'i', 'o', 'u']) {
            det.push('n');
        }
        format!("{} {det} {noun}", g.option(slot::OPENING, t[slot::OPENING]))
    }

    pub fn phrase(&self, aspect: Aspect, bins: &AttributeBins, trace: &GrammarTrace) -> String {
        let g = &self.grammar;
        let t = &trace.0;
        let opt = |s: usize| g.option(s, t[s]);
        match aspect {
            Aspect::Location => {
                let (r, c) = bins.location;
                let desc = if bins.location == CENTER {
                    opt(slot::CENTER_WORD).to_string()
                } else {
                    let style = t[slot::LOCATION_STYLE] as usize;
                    opt(slot::LOCATION_STYLE)
                        .replace("{row}", &g.tables.rows[style][r as usize])
                        .replace("{col}", &g.tables.cols[style][c as usize])
                };
                format!(
                    "{} {}{}{desc}",
                    opt(slot::LOCATION_SUBJECT),
                    opt(slot::LOCATION_VERB),
                    opt(slot::LOCATION_HEDGE)
                )
            }
            Aspect::Size => {
                let word = opt(slot::SIZE_WORD[bins.size_class as usize]);
                let body = opt(slot::SIZE_FRAME).replace("{adv}", opt(slot::SIZE_ADVERB)).replace("{word}", word);
                format!("{} {body}", opt(slot::SIZE_SUBJECT))
            }
            Aspect::Color => {
                let noun = opt(slot::COLOUR_SPELLING);
                let body = opt(slot::COLOR_FRAME)
                    .replace("{hedge}", opt(slot::COLOR_HEDGE))
                    .replace("{color}", &self.colors.get(bins.color as usize).name)
                    .replace("{colored}", &format!("{noun}ed"))
                    .replace("{color_noun}", noun);
                format!("{} {body}", opt(slot::COLOR_SUBJECT))
            }
            Aspect::Rotation => {
                let body = match bins.rotation {
                    RotationBin::Cardinal(k) => {
                        let names = if t[slot::CARDINAL_FORMAT] == 0 {
                            &g.tables.cardinal_long
                        } else {
                            &g.tables.cardinal_abbreviation
                        };
                        opt(slot::CARDINAL_FRAME)
                            .replace("{hedge}", opt(slot::ROTATION_HEDGE))
                            .replace("{dir}", &names[k as usize])
                    }
                    RotationBin::Corner(k) => {
                        let mut name = g.tables.corners[k as usize].clone();
                        if t[slot::CORNER_FORMAT] == 1 {
                            name = name.replace('-', " ");
                        }
                        opt(slot::CORNER_FRAME).replace("{hedge}", opt(slot::ROTATION_HEDGE)).replace("{corner}", &name)
                    }
                    RotationBin::Degrees(d) => {
                        let shown = if t[slot::DEGREE_DIRECTION] == 0 { d } else { (360 - d) % 360 };
                        opt(slot::DEGREE_FRAME)
                            .replace("{hedge}", opt(slot::DEGREE_HEDGE))
                            .replace("{deg}", &shown.to_string())
                            .replace("{unit}", opt(slot::DEGREE_UNIT))
                            .replace("{direction}", opt(slot::DEGREE_DIRECTION))
                    }
                };
                format!("{} {body}", opt(slot::ROTATION_SUBJECT))
            }
        }
    }
}
