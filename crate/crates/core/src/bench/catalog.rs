use crate::partition::{LayerProfile, PartitionError, PartitionPlan};

/// LeNet layer names against their row numerals in the MAC table.
pub const LAYER_NAMES: [(&str, &str); 7] = [
    ("conv1", "I"),
    ("pool1", "II"),
    ("conv2", "III"),
    ("pool2", "IV"),
    ("conv3", "V"),
    ("ip1", "VI"),
    ("ip2", "VII"),
];

pub fn layer_index(name: &str) -> Option<usize> {
    LAYER_NAMES
        .iter()
        .position(|(n, numeral)| *n == name || *numeral == name)
}

/// One way of spreading LeNet over 1 to 3 workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    pub workers: usize,
    /// Cut `c` splits after the first `c` layers.
    pub cuts: Vec<usize>,
}

impl Scenario {
    fn new(id: &str, cuts: &[usize]) -> Self {
        Self {
            id: id.to_string(),
            workers: cuts.len() + 1,
            cuts: cuts.to_vec(),
        }
    }

    pub fn plan(&self, profile: &LayerProfile) -> Result<PartitionPlan, PartitionError> {
        PartitionPlan::from_cuts(profile, self.cuts.clone())
    }

    pub fn stage_ranges(&self) -> Vec<(usize, usize)> {
        crate::partition::stage_bounds(&self.cuts, LAYER_NAMES.len()).collect()
    }

    /// e.g. `conv1 & pool1 | conv2 to ip2`
    pub fn describe(&self) -> String {
        self.stage_ranges()
            .iter()
            .map(|&(s, e)| match e - s {
                7 => "Full LeNet".to_string(),
                1 => LAYER_NAMES[s].0.to_string(),
                2 => format!("{} & {}", LAYER_NAMES[s].0, LAYER_NAMES[s + 1].0),
                _ => format!("{} to {}", LAYER_NAMES[s].0, LAYER_NAMES[e - 1].0),
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

pub fn scenario_catalog() -> Vec<Scenario> {
    let mut out = vec![Scenario::new("I.1", &[])];
    out.extend((1..=6).map(|c| Scenario::new(&format!("II.{c}"), &[c])));
    out.push(Scenario::new("III.1", &[2, 4]));
    out.push(Scenario::new("III.2", &[2, 5]));
    out
}

pub fn find_scenario(id: &str) -> Option<Scenario> {
    scenario_catalog().into_iter().find(|s| s.id == id)
}

/// `all` or a comma-separated list of ids.
pub fn select_scenarios(spec: &str) -> Result<Vec<Scenario>, String> {
    if spec == "all" {
        return Ok(scenario_catalog());
    }
    spec.split(',')
        .map(|id| {
            find_scenario(id.trim()).ok_or_else(|| format!("unknown scenario {:?}", id.trim()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // the distribution table as published, one row per case
    const TABLE: &str = "\
I.1   | Full LeNet     | --             | --
II.1  | conv1          | pool1 to ip2   | --
II.2  | conv1 & pool1  | conv2 to ip2   | --
II.3  | conv1 to conv2 | pool2 to ip2   | --
II.4  | conv1 to pool2 | conv3 to ip2   | --
II.5  | conv1 to conv3 | ip1 & ip2      | --
II.6  | conv1 to ip1   | ip2            | --
III.1 | conv1 & pool1  | conv2 & pool2  | conv3 to ip2
III.2 | conv1 & pool1  | conv2 to conv3 | ip1 & ip2";

    fn parse_cell(cell: &str) -> Option<(usize, usize)> {
        let cell = cell.trim();
        if cell == "--" {
            return None;
        }
        if cell == "Full LeNet" {
            return Some((0, 7));
        }
        let (a, b) = cell
            .split_once(" to ")
            .or_else(|| cell.split_once(" & "))
            .unwrap_or((cell, cell));
        Some((layer_index(a).unwrap(), layer_index(b).unwrap() + 1))
    }

    #[test]
    fn catalog_matches_table() {
        let catalog = scenario_catalog();
        let rows: Vec<_> = TABLE.lines().collect();
        assert_eq!(catalog.len(), rows.len());
        for (s, row) in catalog.iter().zip(rows) {
            let mut cells = row.split('|');
            assert_eq!(cells.next().unwrap().trim(), s.id);
            let ranges: Vec<_> = cells.filter_map(parse_cell).collect();
            assert_eq!(s.stage_ranges(), ranges, "{}", s.id);
            assert_eq!(s.workers, ranges.len());
        }
    }

    #[test]
    fn descriptions() {
        assert_eq!(
            find_scenario("II.2").unwrap().describe(),
            "conv1 & pool1 | conv2 to ip2"
        );
        assert_eq!(
            find_scenario("III.1").unwrap().describe(),
            "conv1 & pool1 | conv2 & pool2 | conv3 to ip2"
        );
        assert_eq!(find_scenario("I.1").unwrap().describe(), "Full LeNet");
    }

    #[test]
    fn naming_map() {
        assert_eq!(layer_index("conv3"), Some(4));
        assert_eq!(layer_index("VI"), Some(5));
        assert_eq!(layer_index("fc9"), None);
    }

    #[test]
    fn selection() {
        assert_eq!(select_scenarios("all").unwrap().len(), 9);
        assert_eq!(select_scenarios("II.2,III.1").unwrap().len(), 2);
        assert!(select_scenarios("IV.1").is_err());
    }
}
