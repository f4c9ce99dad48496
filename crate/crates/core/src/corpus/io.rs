use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ItemId, Locale, Product, ProductCatalog, SessionRecord};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct SessionLine {
    locale: String,
    prev_items: Vec<String>,
    #[serde(default)]
    next_item: Option<String>,
}

#[derive(Serialize)]
struct SessionLineOut<'a> {
    locale: &'a str,
    prev_items: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    next_item: Option<&'a str>,
}

/// Reads JSON-lines sessions. `session_id` is the 0-based line index; blank
/// lines are rejected so ids always match line positions.
pub fn parse_sessions<R: BufRead>(reader: R) -> Result<Vec<SessionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let parsed: SessionLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, format!("malformed session JSON ({e})")))?;
        if parsed.prev_items.len() < 2 {
            return Err(Error::parse(lineno, "prev_items length < 2"));
        }
        let locale = Locale::new(&parsed.locale).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let qualify = |raw: &str| ItemId::new(locale.clone(), raw).map_err(|e| Error::parse(lineno, e.to_string()));
        let prev_items = parsed
            .prev_items
            .iter()
            .map(|r| qualify(r))
            .collect::<Result<Vec<_>>>()?;
        let next_item = parsed.next_item.as_deref().map(qualify).transpose()?;
        out.push(SessionRecord {
            session_id: i as u64,
            locale,
            prev_items,
            next_item,
        });
    }
    Ok(out)
}

pub fn write_sessions<W: Write>(mut w: W, sessions: &[SessionRecord]) -> Result<()> {
    for s in sessions {
        let line = SessionLineOut {
            locale: s.locale.as_str(),
            prev_items: s.prev_items.iter().map(ItemId::raw).collect(),
            next_item: s.next_item.as_ref().map(ItemId::raw),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON-lines products keyed by `(locale, id)`. Keys other than
/// `id`, `locale`, `title`, `brand` and `price` become extra attributes in
/// line order; their values must be strings.
pub fn parse_products<R: BufRead>(reader: R) -> Result<ProductCatalog> {
    let mut catalog = ProductCatalog::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let obj: Map<String, Value> =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, format!("malformed product JSON ({e})")))?;
        let field = |key: &str| -> Result<&str> {
            match obj.get(key) {
                Some(Value::String(s)) => Ok(s),
                Some(_) => Err(Error::parse(lineno, format!("{key} must be a string"))),
                None => Err(Error::parse(lineno, format!("missing {key}"))),
            }
        };
        let locale = Locale::new(field("locale")?).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let id = ItemId::new(locale, field("id")?).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let title = field("title")?.to_string();
        let brand = match obj.get("brand") {
            None | Some(Value::Null) => None,
            Some(_) => Some(field("brand")?.to_string()),
        };
        let price = match obj.get("price") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => n.as_f64(),
            Some(Value::String(s)) => Some(
                s.parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("price {s:?} is not a number")))?,
            ),
            Some(_) => return Err(Error::parse(lineno, "price must be a number")),
        };
        let mut extra = Vec::new();
        for (k, v) in &obj {
            if matches!(k.as_str(), "id" | "locale" | "title" | "brand" | "price") {
                continue;
            }
            match v {
                Value::String(s) => extra.push((k.clone(), s.clone())),
                _ => return Err(Error::parse(lineno, format!("attribute {k} must be a string"))),
            }
        }
        let product = Product {
            id,
            title,
            brand,
            price,
            extra,
        };
        catalog
            .insert(product)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
    }
    Ok(catalog)
}

pub fn write_products<W: Write>(mut w: W, catalog: &ProductCatalog) -> Result<()> {
    for p in catalog.iter() {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::from(p.id.raw()));
        obj.insert("locale".into(), Value::from(p.id.locale().as_str()));
        obj.insert("title".into(), Value::from(p.title.as_str()));
        if let Some(b) = &p.brand {
            obj.insert("brand".into(), Value::from(b.as_str()));
        }
        if let Some(price) = p.price {
            obj.insert("price".into(), Value::from(price));
        }
        for (k, v) in &p.extra {
            obj.insert(k.clone(), Value::from(v.as_str()));
        }
        serde_json::to_writer(&mut w, &obj)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
