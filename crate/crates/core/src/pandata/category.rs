use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
    pub isthing: bool,
}

/// Ordered category list shared by the generator, the evaluator and the model head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub categories: Vec<Category>,
}

impl Default for Taxonomy {
    /// Six thing categories and three stuff categories.
    fn default() -> Self {
        let things = ["crate", "ball", "cone", "tile", "kite", "block"];
        let stuff = ["floor", "wall", "sky"];
        let mut categories = Vec::new();
        for (i, name) in things.iter().enumerate() {
            categories.push(Category {
                id: i as u32 + 1,
                name: (*name).to_string(),
                isthing: true,
            });
        }
        for (i, name) in stuff.iter().enumerate() {
            categories.push(Category {
                id: (things.len() + i) as u32 + 1,
                name: (*name).to_string(),
                isthing: false,
            });
        }
        Taxonomy { categories }
    }
}

impl Taxonomy {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let tax = Taxonomy { categories };
        tax.validate()?;
        Ok(tax)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Config("taxonomy has no categories".into()));
        }
        let mut ids: Vec<u32> = self.categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("taxonomy has duplicate category ids".into()));
        }
        if ids[0] == 0 {
            return Err(Error::Config("category id 0 is reserved for void".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Position of `id` in the category list; this is the model's class index.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.categories.iter().position(|c| c.id == id)
    }

    pub fn is_thing(&self, id: u32) -> Result<bool> {
        self.get(id)
            .map(|c| c.isthing)
            .ok_or(Error::UnknownCategory(id))
    }

    pub fn thing_ids(&self) -> Vec<u32> {
        self.categories
            .iter()
            .filter(|c| c.isthing)
            .map(|c| c.id)
            .collect()
    }

    pub fn stuff_ids(&self) -> Vec<u32> {
        self.categories
            .iter()
            .filter(|c| !c.isthing)
            .map(|c| c.id)
            .collect()
    }
}
