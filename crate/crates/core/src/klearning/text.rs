//! Posterior file format read by the `exact` subcommand.
//!
//! ```text
//! ersac-posterior 1
//! sigma 1.5
//! sigma2 0 0 1 0.25
//! member 0.5
//! horizon 1
//! actions 2
//! layers 1
//! init 0 1
//! reward 0 0 1 1
//! end
//! member 0.5
//! horizon 1
//! actions 2
//! layers 1
//! init 0 1
//! reward 0 0 0 1
//! end
//! ```
//!
//! `sigma <x>` sets `sigma2 = x^2` everywhere; `sigma2 <l> <s> <a> <v>` rows
//! override single entries. Each `member <w>` block uses the MDP body syntax
//! and ends with `end`. A bare `ersac-mdp 1` file is read as a posterior
//! certain about that MDP with zero uncertainty.

use std::fmt::Write as _;

use super::{uniform_sigma2, FiniteMixturePosterior, KlError};
use crate::mdp::text::{next_content, parse_mdp_body, write_mdp_body, MDP_HEADER};
use crate::mdp::{parse_mdp, MdpError};

pub const POSTERIOR_HEADER: &str = "ersac-posterior 1";

fn perr(line: usize, msg: impl Into<String>) -> KlError {
    KlError::Mdp(MdpError::Parse {
        line,
        msg: msg.into(),
    })
}

pub fn parse_posterior(text: &str) -> Result<FiniteMixturePosterior, KlError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (first_line, first) = next_content(&mut lines).ok_or_else(|| perr(1, "empty input"))?;
    match first.trim() {
        MDP_HEADER => {
            let mdp = parse_mdp(text)?;
            let s2 = uniform_sigma2(&mdp, 0.0);
            return FiniteMixturePosterior::point(mdp, s2);
        }
        POSTERIOR_HEADER => {}
        _ => return Err(perr(first_line, "unrecognized header")),
    }
    let mut sigma = 0.0;
    let mut overrides: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    let mut members = Vec::new();
    while let Some((line, raw)) = next_content(&mut lines) {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let field = |i: usize| -> Result<&str, KlError> { toks.get(i).copied().ok_or_else(|| perr(line, "missing field")) };
        let as_f64 = |s: &str| s.parse::<f64>().map_err(|_| perr(line, format!("bad number '{s}'")));
        let as_usize = |s: &str| s.parse::<usize>().map_err(|_| perr(line, format!("bad index '{s}'")));
        match toks[0] {
            "sigma" => sigma = as_f64(field(1)?)?,
            "sigma2" => overrides.push((
                line,
                as_usize(field(1)?)?,
                as_usize(field(2)?)?,
                as_usize(field(3)?)?,
                as_f64(field(4)?)?,
            )),
            "member" => {
                let w = as_f64(field(1)?)?;
                let mdp = parse_mdp_body(&mut lines, Some("end"))?;
                members.push((w, mdp));
            }
            other => return Err(perr(line, format!("unknown key '{other}'"))),
        }
    }
    let shape = &members.first().ok_or(KlError::EmptyMixture)?.1;
    let a_n = shape.num_actions();
    let mut s2 = uniform_sigma2(shape, sigma * sigma);
    for (line, l, s, a, v) in overrides {
        if l >= shape.horizon() || s >= shape.num_states(l) || a >= a_n {
            return Err(perr(line, "index out of range"));
        }
        s2[l][s * a_n + a] = v;
    }
    FiniteMixturePosterior::new(members, s2)
}

pub fn write_posterior(posterior: &FiniteMixturePosterior) -> String {
    let mut out = String::new();
    writeln!(out, "{POSTERIOR_HEADER}").unwrap();
    let shape = &posterior.members()[0].1;
    let a_n = shape.num_actions();
    for (l, t) in posterior.sigma2().iter().enumerate() {
        for (idx, v) in t.iter().enumerate() {
            if *v != 0.0 {
                writeln!(out, "sigma2 {l} {} {} {v}", idx / a_n, idx % a_n).unwrap();
            }
        }
    }
    for (w, m) in posterior.members() {
        writeln!(out, "member {w}").unwrap();
        write_mdp_body(m, &mut out);
        writeln!(out, "end").unwrap();
    }
    out
}
