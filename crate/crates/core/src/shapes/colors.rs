use super::ShapesError;

pub const COLORS_TSV: &str = include_str!("../../assets/colors.tsv");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedColor {
    pub name: String,
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorTable {
    entries: Vec<NamedColor>,
}

impl ColorTable {
    pub fn builtin() -> Self {
        Self::parse(COLORS_TSV).expect("shipped color table is well formed")
    }

    /// Parses `name\tr\tg\tb` rows after a header line.
    pub fn parse(text: &str) -> Result<Self, ShapesError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || ShapesError::Asset(format!("colors line {}: {line:?}", n + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad());
            }
            let mut rgb = [0u8; 3];
            for k in 0..3 {
                rgb[k] = cols[k + 1].trim().parse().map_err(|_| bad())?;
            }
            entries.push(NamedColor { name: cols[0].to_string(), rgb });
        }
        if entries.is_empty() {
            return Err(ShapesError::Config("color table is empty".into()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> &NamedColor {
        &self.entries[id]
    }

    pub fn entries(&self) -> &[NamedColor] {
        &self.entries
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|c| c.name == name)
    }

    /// Index of the closest entry in RGB space; ties go to the lowest index.
    pub fn nearest(&self, rgb: [u8; 3]) -> usize {
        let dist = |c: &NamedColor| -> u32 { (0..3).map(|k| (c.rgb[k] as i32 - rgb[k] as i32).pow(2) as u32).sum() };
        let mut best = 0;
        let mut best_d = u32::MAX;
        for (i, c) in self.entries.iter().enumerate() {
            let d = dist(c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}
