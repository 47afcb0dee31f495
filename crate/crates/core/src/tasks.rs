//! Classification tasks defined over a multi-task image set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl TaskSpec {
    pub fn new(name: &str, class_names: &[&str]) -> Result<Self> {
        let spec = TaskSpec {
            name: name.to_string(),
            num_classes: class_names.len(),
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.num_classes {
            return Err(Error::InvalidConfig(format!(
                "task {} declares {} classes but names {}",
                self.name,
                self.num_classes,
                self.class_names.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::TooFewClasses {
                task: self.name.clone(),
                classes: self.num_classes,
            });
        }
        for (i, a) in self.class_names.iter().enumerate() {
            if self.class_names[..i].contains(a) {
                return Err(Error::InvalidConfig(format!(
                    "task {} repeats class name {a}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

/// Ordered list of tasks; the order fixes matrix rows and columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskRegistry(pub Vec<TaskSpec>);

pub const SHAPES: [&str; 5] = ["circle", "triangle", "diamond", "pentagon", "hexagon"];
pub const COLORS: [&str; 7] = ["violet", "indigo", "blue", "green", "yellow", "orange", "red"];
pub const SIZES: [&str; 3] = ["small", "medium", "large"];
pub const LOCATIONS: [&str; 4] = ["quadrant_1", "quadrant_2", "quadrant_3", "quadrant_4"];
pub const BACKGROUNDS: [&str; 3] = ["white", "black", "colored"];

impl TaskRegistry {
    /// shape:5, color:7, size:3, location:4, background:3.
    pub fn preserve_task() -> Self {
        TaskRegistry(vec![
            TaskSpec::new("shape", &SHAPES).unwrap(),
            TaskSpec::new("color", &COLORS).unwrap(),
            TaskSpec::new("size", &SIZES).unwrap(),
            TaskSpec::new("location", &LOCATIONS).unwrap(),
            TaskSpec::new("background", &BACKGROUNDS).unwrap(),
        ])
    }

    /// digit:10, fgcolor:10, bgcolor:10.
    pub fn colored_mnist() -> Self {
        let digits: Vec<String> = (0..10).map(|d| d.to_string()).collect();
        let digits: Vec<&str> = digits.iter().map(String::as_str).collect();
        let colors = crate::mnist::PALETTE_NAMES;
        TaskRegistry(vec![
            TaskSpec::new("digit", &digits).unwrap(),
            TaskSpec::new("fgcolor", &colors).unwrap(),
            TaskSpec::new("bgcolor", &colors).unwrap(),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.0.iter().enumerate() {
            t.validate()?;
            if self.0[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::InvalidConfig(format!("duplicate task {}", t.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.0
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&TaskSpec> {
        self.0.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(|t| t.name.as_str()).collect()
    }

    /// Number of label combinations (the Cartesian product of all tasks).
    pub fn variation_count(&self) -> usize {
        self.0.iter().map(|t| t.num_classes).product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_registry_counts() {
        let reg = TaskRegistry::preserve_task();
        let counts: Vec<_> = reg.tasks().iter().map(|t| t.num_classes).collect();
        assert_eq!(counts, vec![5, 7, 3, 4, 3]);
        assert_eq!(reg.variation_count(), 1260);
        reg.validate().unwrap();
        TaskRegistry::colored_mnist().validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            TaskSpec::new("x", &["only"]),
            Err(Error::TooFewClasses { .. })
        ));
        assert!(TaskSpec::new("x", &["a", "a"]).is_err());
        let t = TaskSpec {
            name: "x".into(),
            num_classes: 3,
            class_names: vec!["a".into(), "b".into()],
        };
        assert!(t.validate().is_err());
    }
}
