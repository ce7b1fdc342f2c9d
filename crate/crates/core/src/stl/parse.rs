//! Concrete syntax for formulas.
//!
//! ```text
//! phi := "T" | ident | "!" phi | phi "&" phi | phi "|" phi
//!      | "F[" int "," int "]" phi | "G[" int "," int "]" phi | "(" phi ")"
//! ```
//!
//! Precedence is `!`/`F`/`G` > `&` > `|`. An unparenthesized chain `a & b & c` becomes one n-ary
//! conjunction; parentheses introduce nesting.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::{Formula, Interval, Predicate, PredicateFn, StlError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown predicate `{name}` at byte {pos}")]
    UnknownPredicate { pos: usize, name: String },
    #[error("malformed interval [{a},{b}] at byte {pos}: start exceeds end")]
    MalformedInterval { pos: usize, a: usize, b: usize },
}

/// Name resolution for formula identifiers.
///
/// Boxes are registered as a conjunction of per-component halfplanes; each halfplane is also
/// reachable under its own name (`<box>_lo<i>`, `<box>_hi<i>`) so printed formulas parse back to
/// the same tree.
#[derive(Debug, Clone, Default)]
pub struct PredicateTable<T> {
    entries: BTreeMap<String, Formula<T>>,
}

impl<T: Scalar> PredicateTable<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    fn make(name: &str, func: PredicateFn<T>, scale: T) -> Result<Arc<Predicate<T>>, StlError> {
        Predicate::new(name, func, scale)
            .map(Arc::new)
            .ok_or_else(|| StlError::InvalidPredicate {
                name: name.to_string(),
                reason: "scale must be finite and positive".into(),
            })
    }

    fn check_name(name: &str) -> Result<(), StlError> {
        let mut chars = name.chars();
        let ok = chars
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
            && !matches!(name, "T" | "F" | "G");
        if ok {
            Ok(())
        } else {
            Err(StlError::InvalidPredicate {
                name: name.to_string(),
                reason: "not a valid identifier".into(),
            })
        }
    }

    /// `coeffs . q + offset >= 0`.
    pub fn insert_halfplane(
        &mut self,
        name: &str,
        coeffs: Vec<T>,
        offset: T,
        scale: T,
    ) -> Result<(), StlError> {
        Self::check_name(name)?;
        let p = Self::make(name, PredicateFn::Halfplane { coeffs, offset }, scale)?;
        self.entries.insert(name.to_string(), Formula::Atom(p));
        Ok(())
    }

    /// `|q - center| <= radius` on the leading components.
    pub fn insert_disk(
        &mut self,
        name: &str,
        center: Vec<T>,
        radius: T,
        scale: T,
    ) -> Result<(), StlError> {
        Self::check_name(name)?;
        if !(radius > T::zero()) {
            return Err(StlError::InvalidPredicate {
                name: name.to_string(),
                reason: "radius must be positive".into(),
            });
        }
        let p = Self::make(name, PredicateFn::Disk { center, radius }, scale)?;
        self.entries.insert(name.to_string(), Formula::Atom(p));
        Ok(())
    }

    /// Axis-aligned box `lower <= q <= upper` on the leading components.
    pub fn insert_box(
        &mut self,
        name: &str,
        lower: &[T],
        upper: &[T],
        scale: T,
    ) -> Result<(), StlError> {
        Self::check_name(name)?;
        if lower.len() != upper.len() || lower.is_empty() || lower.iter().zip(upper).any(|(l, u)| l >= u) {
            return Err(StlError::InvalidPredicate {
                name: name.to_string(),
                reason: "box needs matching non-empty bounds with lower < upper".into(),
            });
        }
        let mut atoms = Vec::with_capacity(2 * lower.len());
        for (i, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
            let mut e = vec![T::zero(); i + 1];
            e[i] = T::one();
            let lo_name = format!("{name}_lo{i}");
            let lo_p = Self::make(&lo_name, PredicateFn::Halfplane { coeffs: e.clone(), offset: -lo }, scale)?;
            e[i] = -T::one();
            let hi_name = format!("{name}_hi{i}");
            let hi_p = Self::make(&hi_name, PredicateFn::Halfplane { coeffs: e, offset: hi }, scale)?;
            self.entries.insert(lo_name, Formula::Atom(lo_p.clone()));
            self.entries.insert(hi_name, Formula::Atom(hi_p.clone()));
            atoms.push(Formula::Atom(lo_p));
            atoms.push(Formula::Atom(hi_p));
        }
        self.entries.insert(name.to_string(), Formula::and(atoms));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Formula<T>> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Parses `text`, resolving identifiers against `table`.
pub fn parse_formula<T: Scalar>(
    text: &str,
    table: &PredicateTable<T>,
) -> Result<Formula<T>, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        table,
    };
    let f = p.disjunction()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(f)
}

struct Parser<'a, T> {
    src: &'a [u8],
    pos: usize,
    table: &'a PredicateTable<T>,
}

impl<T: Scalar> Parser<'_, T> {
    fn syntax(&self, msg: &str) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn disjunction(&mut self) -> Result<Formula<T>, ParseError> {
        let mut items = vec![self.conjunction()?];
        while self.peek() == Some(b'|') {
            self.pos += 1;
            items.push(self.conjunction()?);
        }
        Ok(Formula::or(items))
    }

    fn conjunction(&mut self) -> Result<Formula<T>, ParseError> {
        let mut items = vec![self.unary()?];
        while self.peek() == Some(b'&') {
            self.pos += 1;
            items.push(self.unary()?);
        }
        Ok(Formula::and(items))
    }

    fn unary(&mut self) -> Result<Formula<T>, ParseError> {
        match self.peek() {
            Some(b'!') => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(b'(') => {
                self.pos += 1;
                let f = self.disjunction()?;
                self.expect(b')')?;
                Ok(f)
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                let ident = self.ident();
                match ident.as_str() {
                    "F" | "G" => {
                        let interval = self.interval()?;
                        let body = self.unary()?;
                        Ok(if ident == "F" {
                            Formula::eventually(interval, body)
                        } else {
                            Formula::always(interval, body)
                        })
                    }
                    "T" => Ok(Formula::True),
                    name => self.table.get(name).cloned().ok_or_else(|| {
                        ParseError::UnknownPredicate {
                            pos: start,
                            name: name.to_string(),
                        }
                    }),
                }
            }
            Some(_) => Err(self.syntax("expected a formula")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn integer(&mut self) -> Result<usize, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected a non-negative integer"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| ParseError::Syntax {
                pos: start,
                msg: "integer out of range".into(),
            })
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        let open = self.pos;
        self.expect(b'[')?;
        let a = self.integer()?;
        self.expect(b',')?;
        let b = self.integer()?;
        self.expect(b']')?;
        Interval::new(a, b).ok_or(ParseError::MalformedInterval { pos: open, a, b })
    }
}
