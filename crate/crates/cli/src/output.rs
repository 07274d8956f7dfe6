use mbaqp_core::AggregateResult;

/// Left-aligned plain-text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.6}")
    }
}

pub fn result_table(r: &AggregateResult, group_names: &[String], errors: Option<&[(Vec<String>, f64)]>) -> String {
    let mut header: Vec<&str> = group_names.iter().map(String::as_str).collect();
    header.push("value");
    if errors.is_some() {
        header.push("rel_error");
    }
    let rows: Vec<Vec<String>> = r
        .groups
        .iter()
        .map(|g| {
            let mut row = g.key.clone();
            row.push(num(g.value));
            if let Some(errs) = errors {
                let e = errs.iter().find(|(k, _)| *k == g.key).map(|(_, e)| format!("{e:.6}"));
                row.push(e.unwrap_or_else(|| "-".into()));
            }
            row
        })
        .collect();
    table(&header, &rows)
}

pub fn meta_line(r: &AggregateResult) -> String {
    let m = &r.meta;
    let mut s = format!("strategy: {}  samples: {}  elapsed: {:.3} ms", m.strategy, m.samples_used, m.elapsed_ms);
    if let Some(id) = &m.model_id {
        s += &format!("  model: {id}");
    }
    if let Some(seed) = m.seed {
        s += &format!("  seed: {seed}");
    }
    s
}
