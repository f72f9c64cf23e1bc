//! Plain-text tabular MDP format.
//!
//! ```text
//! ersac-mdp 1
//! horizon 2
//! actions 2
//! layers 1 2
//! noise 0
//! init 0 1
//! reward 0 0 1 0.5
//! trans 0 0 1 1 1
//! ```
//!
//! `layers` lists the state count of each layer. `init <s> <p>`,
//! `reward <l> <s> <a> <r>` and `trans <l> <s> <a> <s'> <p>` rows are sparse;
//! missing entries are zero. Lines starting with `#` are comments. Floats are
//! written in shortest round-trip form so a write/parse cycle is bit-exact.

use std::fmt::Write as _;

use super::{MdpError, TabularMdp};

pub const MDP_HEADER: &str = "ersac-mdp 1";

pub fn write_mdp(mdp: &TabularMdp) -> String {
    let mut out = String::new();
    writeln!(out, "{MDP_HEADER}").unwrap();
    write_mdp_body(mdp, &mut out);
    out
}

pub(crate) fn write_mdp_body(mdp: &TabularMdp, out: &mut String) {
    let a_n = mdp.num_actions();
    writeln!(out, "horizon {}", mdp.horizon()).unwrap();
    writeln!(out, "actions {a_n}").unwrap();
    let layers: Vec<String> = mdp.layer_states().iter().map(|n| n.to_string()).collect();
    writeln!(out, "layers {}", layers.join(" ")).unwrap();
    writeln!(out, "noise {}", mdp.reward_noise_scale()).unwrap();
    for (s, p) in mdp.initial_dist().iter().enumerate() {
        if *p != 0.0 {
            writeln!(out, "init {s} {p}").unwrap();
        }
    }
    for (l, table) in mdp.mean_rewards().iter().enumerate() {
        for (idx, r) in table.iter().enumerate() {
            if *r != 0.0 {
                writeln!(out, "reward {l} {} {} {r}", idx / a_n, idx % a_n).unwrap();
            }
        }
    }
    for (l, table) in mdp.transitions().iter().enumerate() {
        let next = mdp.num_states(l + 1);
        for (idx, p) in table.iter().enumerate() {
            if *p != 0.0 {
                let row = idx / next;
                writeln!(out, "trans {l} {} {} {} {p}", row / a_n, row % a_n, idx % next).unwrap();
            }
        }
    }
}

pub fn parse_mdp(text: &str) -> Result<TabularMdp, MdpError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (line_no, first) = next_content(&mut lines).ok_or(MdpError::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    if first.trim() != MDP_HEADER {
        return Err(MdpError::Parse {
            line: line_no,
            msg: format!("expected header '{MDP_HEADER}'"),
        });
    }
    parse_mdp_body(&mut lines, None)
}

pub(crate) fn next_content<'a, I>(lines: &mut I) -> Option<(usize, &'a str)>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    lines.find(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    })
}

fn perr(line: usize, msg: impl Into<String>) -> MdpError {
    MdpError::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T, MdpError> {
    let tok = tok.ok_or_else(|| perr(line, "missing field"))?;
    tok.parse().map_err(|_| perr(line, format!("bad number '{tok}'")))
}

/// Parses keyed rows until input ends or `terminator` is seen.
pub(crate) fn parse_mdp_body<'a, I>(lines: &mut I, terminator: Option<&str>) -> Result<TabularMdp, MdpError>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let mut horizon: Option<usize> = None;
    let mut actions: Option<usize> = None;
    let mut layers: Option<Vec<usize>> = None;
    let mut noise = 0.0;
    let mut init: Vec<(usize, usize, f64)> = Vec::new();
    let mut rewards: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    let mut trans: Vec<(usize, usize, usize, usize, usize, f64)> = Vec::new();
    let mut last_line = 0;
    while let Some((line, raw)) = next_content(lines) {
        last_line = line;
        let mut toks = raw.split_whitespace();
        let key = toks.next().unwrap_or_default();
        if Some(key) == terminator {
            break;
        }
        match key {
            "horizon" => horizon = Some(num(toks.next(), line)?),
            "actions" => actions = Some(num(toks.next(), line)?),
            "layers" => {
                layers = Some(
                    toks.by_ref()
                        .map(|t| num(Some(t), line))
                        .collect::<Result<Vec<usize>, _>>()?,
                )
            }
            "noise" => noise = num(toks.next(), line)?,
            "init" => init.push((line, num(toks.next(), line)?, num(toks.next(), line)?)),
            "reward" => rewards.push((
                line,
                num(toks.next(), line)?,
                num(toks.next(), line)?,
                num(toks.next(), line)?,
                num(toks.next(), line)?,
            )),
            "trans" => trans.push((
                line,
                num(toks.next(), line)?,
                num(toks.next(), line)?,
                num(toks.next(), line)?,
                num(toks.next(), line)?,
                num(toks.next(), line)?,
            )),
            other => return Err(perr(line, format!("unknown key '{other}'"))),
        }
        if toks.next().is_some() {
            return Err(perr(line, "trailing fields"));
        }
    }
    let layers = layers.ok_or_else(|| perr(last_line, "missing 'layers'"))?;
    let a_n = actions.ok_or_else(|| perr(last_line, "missing 'actions'"))?;
    if let Some(h) = horizon {
        if h != layers.len() {
            return Err(perr(last_line, "horizon disagrees with layers"));
        }
    }
    let h = layers.len();
    if h == 0 {
        return Err(MdpError::EmptyHorizon);
    }
    let mut init_dist = vec![0.0; layers[0]];
    for (line, s, p) in init {
        *init_dist.get_mut(s).ok_or_else(|| perr(line, "state out of range"))? = p;
    }
    let mut reward_tables: Vec<Vec<f64>> = layers.iter().map(|n| vec![0.0; n * a_n]).collect();
    for (line, l, s, a, r) in rewards {
        if l >= h || s >= layers[l] || a >= a_n {
            return Err(perr(line, "index out of range"));
        }
        reward_tables[l][s * a_n + a] = r;
    }
    let mut trans_tables: Vec<Vec<f64>> = (0..h.saturating_sub(1))
        .map(|l| vec![0.0; layers[l] * a_n * layers[l + 1]])
        .collect();
    for (line, l, s, a, sn, p) in trans {
        if l + 1 >= h || s >= layers[l] || a >= a_n || sn >= layers[l + 1] {
            return Err(perr(line, "index out of range"));
        }
        trans_tables[l][(s * a_n + a) * layers[l + 1] + sn] = p;
    }
    TabularMdp::new(layers, a_n, trans_tables, reward_tables, noise, init_dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_deep_sea, DeepSeaSpec};

    #[test]
    fn deep_sea_round_trip_is_exact() {
        let ds = build_deep_sea(&DeepSeaSpec::new(5).with_flip_seed(3));
        let text = write_mdp(ds.mdp());
        assert_eq!(&parse_mdp(&text).unwrap(), ds.mdp());
    }

    #[test]
    fn golden_small_file() {
        let text = "ersac-mdp 1\n# two-layer toy\nhorizon 2\nactions 2\nlayers 1 2\nnoise 0\ninit 0 1\n\
                    reward 0 0 1 0.5\nreward 1 1 0 -0.25\ntrans 0 0 0 0 1\ntrans 0 0 1 0 0.25\ntrans 0 0 1 1 0.75\n";
        let mdp = parse_mdp(text).unwrap();
        assert_eq!(mdp.reward(0, 0, 1), 0.5);
        assert_eq!(mdp.reward(1, 1, 0), -0.25);
        assert_eq!(mdp.next_dist(0, 0, 1).unwrap(), &[0.25, 0.75]);
        let again = write_mdp(&mdp);
        assert_eq!(
            again,
            "ersac-mdp 1\nhorizon 2\nactions 2\nlayers 1 2\nnoise 0\ninit 0 1\nreward 0 0 1 0.5\n\
             reward 1 1 0 -0.25\ntrans 0 0 0 0 1\ntrans 0 0 1 0 0.25\ntrans 0 0 1 1 0.75\n"
        );
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_mdp("ersac-mdp 1\nactions 2\nlayers 1\nbogus 3\n").unwrap_err();
        assert_eq!(
            err,
            MdpError::Parse {
                line: 4,
                msg: "unknown key 'bogus'".into()
            }
        );
        assert!(matches!(
            parse_mdp("ersac-mdp 1\nactions 1\nlayers 1\ninit 0 0.5\n").unwrap_err(),
            MdpError::BadInitialDist { .. }
        ));
    }
}
