use crate::metadata::{Crate, CrateType, Kind, MetadataStore};

use super::ApiError;

pub const DEFAULT_PX_PER_METRE: f64 = 6.6;

/// One decimal place, without a trailing `.0`.
pub fn format_coord(v: f64) -> String {
    let r = (v * 10.0).round() / 10.0;
    let r = if r == 0.0 { 0.0 } else { r };
    let s = format!("{r:.1}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\'' => out.push_str("&apos;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&apos;", "'").replace("&quot;", "\"").replace("&amp;", "&")
}

/// Crates drawn on a floor: everything placed on that floor number except
/// buildings and floors themselves, with a boundary, sorted by id.
pub fn floor_crates(store: &MetadataStore, floor: i32) -> Result<Vec<Crate>, ApiError> {
    let mut floor_exists = false;
    let mut out = Vec::new();
    for id in store.ids(Kind::Crate) {
        let Ok(c) = store.crate_(&id) else { continue };
        if c.floor() != Some(floor) {
            continue;
        }
        match c.crate_type {
            CrateType::Floor => floor_exists = true,
            CrateType::Building => {}
            _ if c.acp_boundary.is_some() => out.push(c),
            _ => {}
        }
    }
    if !floor_exists && out.is_empty() {
        return Err(ApiError::NotFound(format!("floor {floor}")));
    }
    Ok(out)
}

/// SVG document with one `<g><polygon/></g>` group per crate on the floor.
pub fn render_floor_svg(store: &MetadataStore, floor: i32, px_per_metre: f64) -> Result<String, ApiError> {
    let mut svg = format!("<svg xmlns='http://www.w3.org/2000/svg' data-floor_number='{floor}'>\n");
    for c in floor_crates(store, floor)? {
        let b = c.acp_boundary.as_ref().expect("floor_crates keeps bounded crates");
        let points: Vec<String> = b
            .points()
            .iter()
            .map(|p| format!("{},{}", format_coord(p[0] * px_per_metre), format_coord(p[1] * px_per_metre)))
            .collect();
        let id = escape(&c.crate_id);
        svg.push_str(&format!(
            "<g><polygon id='{id}' data-crate_type='{}' data-parent_crate='{}' data-floor_number='{floor}' points='{}'><title>{id}</title></polygon></g>\n",
            escape(c.crate_type.name()),
            escape(c.parent_crate_id.as_deref().unwrap_or("")),
            points.join(" "),
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgPolygon {
    /// Attributes in document order.
    pub attributes: Vec<(String, String)>,
    pub points: Vec<[f64; 2]>,
    pub title: String,
}

impl SvgPolygon {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

/// Reads back the polygons of a document produced by [`render_floor_svg`].
pub fn parse_floor_svg(svg: &str) -> Result<Vec<SvgPolygon>, String> {
    let mut out = Vec::new();
    let mut rest = svg;
    while let Some(start) = rest.find("<polygon ") {
        let after = &rest[start + "<polygon ".len()..];
        let end = after.find('>').ok_or("unterminated polygon tag")?;
        let mut attrs_text = &after[..end];
        let mut attributes = Vec::new();
        loop {
            attrs_text = attrs_text.trim_start();
            if attrs_text.is_empty() {
                break;
            }
            let eq = attrs_text.find("='").ok_or("attribute without quoted value")?;
            let name = attrs_text[..eq].to_string();
            let v = &attrs_text[eq + 2..];
            let close = v.find('\'').ok_or("unterminated attribute")?;
            attributes.push((name, unescape(&v[..close])));
            attrs_text = &v[close + 1..];
        }
        let body = &after[end + 1..];
        let title = body
            .strip_prefix("<title>")
            .and_then(|t| t.find("</title>").map(|e| unescape(&t[..e])))
            .ok_or("polygon without title")?;
        let points_attr = attributes.iter().find(|(k, _)| k == "points").map(|(_, v)| v.clone()).ok_or("no points")?;
        let points = points_attr
            .split_whitespace()
            .map(|pair| {
                let (x, y) = pair.split_once(',').ok_or(format!("bad point {pair:?}"))?;
                Ok([x.parse::<f64>().map_err(|e| e.to_string())?, y.parse::<f64>().map_err(|e| e.to_string())?])
            })
            .collect::<Result<Vec<_>, String>>()?;
        out.push(SvgPolygon { attributes, points, title });
        rest = &after[end..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::demo_site;

    #[test]
    fn coordinate_format() {
        assert_eq!(format_coord(362.802), "362.8");
        assert_eq!(format_coord(0.0), "0");
        assert_eq!(format_coord(-0.01), "0");
        assert_eq!(format_coord(40.2996), "40.3");
        assert_eq!(format_coord(66.0), "66");
    }

    #[test]
    fn fe11_polygon() {
        let svg = render_floor_svg(&demo_site(), 1, DEFAULT_PX_PER_METRE).unwrap();
        assert!(svg.contains(
            "<g><polygon id='FE11' data-crate_type='room' data-parent_crate='FF' data-floor_number='1' points='362.8,0 362.8,40.3 482.1,40.3 482.1,0'><title>FE11</title></polygon></g>"
        ));
        let polys = parse_floor_svg(&svg).unwrap();
        let ids: Vec<&str> = polys.iter().map(|p| p.attr("id").unwrap()).collect();
        assert_eq!(ids, ["FE11", "FN05"]);
    }

    #[test]
    fn missing_floor_is_not_found() {
        assert!(matches!(render_floor_svg(&demo_site(), 9, 6.6), Err(ApiError::NotFound(_))));
    }
}
