use crate::error::{Error, Result};
use crate::oblivious::Lanes;
use crate::sharing::{put_bits, take_bits, BitShare, ShareFile, WordShare};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Field {
    pub name: String,
    pub width: u32,
}

/// Public field list. Row encodings place fields in this order, MSB-first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Schema {
    fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: &[(&str, u32)]) -> Self {
        Schema { fields: fields.iter().map(|(n, w)| Field { name: n.to_string(), width: *w }).collect() }
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("no field named {name}")))
    }

    pub fn total_width(&self) -> u32 {
        self.fields.iter().map(|f| f.width).sum()
    }
}

/// One row as held by one party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretRecord {
    pub fields: Vec<WordShare>,
    pub is_dummy: BitShare,
}

/// A table of secret-shared rows with public schema and cardinality.
///
/// Stored column-wise and bit-sliced: each field is a word of lane vectors with
/// one lane per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObliviousTable {
    schema: Schema,
    columns: Vec<Vec<Lanes>>,
    dummy: Lanes,
}

impl ObliviousTable {
    pub fn new(schema: Schema, columns: Vec<Vec<Lanes>>, dummy: Lanes) -> Result<Self> {
        if columns.len() != schema.fields.len() {
            return Err(Error::Schema(format!("{} columns for {} fields", columns.len(), schema.fields.len())));
        }
        let n = dummy.len();
        for (f, col) in schema.fields.iter().zip(&columns) {
            if col.len() != f.width as usize || col.iter().any(|s| s.len() != n) {
                return Err(Error::Schema(format!("column {} does not match its width or the row count", f.name)));
            }
        }
        Ok(ObliviousTable { schema, columns, dummy })
    }

    pub fn empty(schema: Schema) -> Self {
        let columns = schema.fields.iter().map(|f| vec![Lanes::default(); f.width as usize]).collect();
        ObliviousTable { schema, columns, dummy: Lanes::default() }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.dummy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dummy.is_empty()
    }

    pub fn columns(&self) -> &[Vec<Lanes>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&[Lanes]> {
        Ok(&self.columns[self.schema.index_of(name)?])
    }

    /// Single-bit column as lanes.
    pub fn flag(&self, name: &str) -> Result<&Lanes> {
        let col = self.column(name)?;
        if col.len() != 1 {
            return Err(Error::Schema(format!("field {name} is not a flag")));
        }
        Ok(&col[0])
    }

    pub fn set_column(&mut self, name: &str, value: Vec<Lanes>) -> Result<()> {
        let i = self.schema.index_of(name)?;
        if value.len() != self.schema.fields[i].width as usize || value.iter().any(|s| s.len() != self.len()) {
            return Err(Error::Schema(format!("replacement for {name} has the wrong shape")));
        }
        self.columns[i] = value;
        Ok(())
    }

    pub fn dummy(&self) -> &Lanes {
        &self.dummy
    }

    pub fn set_dummy(&mut self, dummy: Lanes) {
        assert_eq!(dummy.len(), self.len());
        self.dummy = dummy;
    }

    pub fn row(&self, i: usize) -> SecretRecord {
        SecretRecord {
            fields: self
                .schema
                .fields
                .iter()
                .zip(&self.columns)
                .map(|(f, col)| {
                    let v = col.iter().enumerate().fold(0u64, |acc, (b, s)| acc | ((s.get(i) as u64) << b));
                    WordShare::new(v, f.width).expect("schema widths are 1..=64")
                })
                .collect(),
            is_dummy: BitShare(self.dummy.get(i)),
        }
    }

    pub fn extract_rows(&self, start: usize, len: usize) -> ObliviousTable {
        ObliviousTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.iter().map(|s| s.extract(start, len)).collect()).collect(),
            dummy: self.dummy.extract(start, len),
        }
    }

    pub fn append(&mut self, other: &ObliviousTable) -> Result<()> {
        if self.schema != other.schema {
            return Err(Error::Schema("cannot append tables with different schemas".into()));
        }
        for (a, b) in self.columns.iter_mut().zip(&other.columns) {
            for (x, y) in a.iter_mut().zip(b) {
                x.append(y);
            }
        }
        self.dummy.append(&other.dummy);
        Ok(())
    }

    /// Appends `count` rows holding public constants: `value(field)` in each field and
    /// `dummy` in the dummy bit. Only the first party's shares carry the constants.
    pub fn push_constant_rows(&mut self, count: usize, first: bool, value: impl Fn(&Field) -> u64, dummy: bool) {
        for (f, col) in self.schema.fields.iter().zip(self.columns.iter_mut()) {
            let v = if first { value(f) } else { 0 };
            for (b, s) in col.iter_mut().enumerate() {
                s.append(&Lanes::filled(count, (v >> b) & 1 == 1));
            }
        }
        self.dummy.append(&Lanes::filled(count, first && dummy));
    }

    /// Reads a share file whose rows are this schema's fields MSB-first, optionally
    /// followed by the dummy bit.
    pub fn from_share_file(schema: Schema, file: &ShareFile, trailing_dummy: bool) -> Result<Self> {
        let width = schema.total_width() + trailing_dummy as u32;
        if file.row_width_bits as u32 != width {
            return Err(Error::Schema(format!("share file rows are {} bits, schema needs {width}", file.row_width_bits)));
        }
        file.check_payload()?;
        let n = file.row_count as usize;
        let mut columns: Vec<Vec<Lanes>> =
            schema.fields.iter().map(|f| vec![Lanes::zeros(n); f.width as usize]).collect();
        let mut dummy = Lanes::zeros(n);
        for i in 0..n {
            let row = file.row(i);
            let mut pos = 0;
            for (f, col) in schema.fields.iter().zip(columns.iter_mut()) {
                let v = take_bits(row, &mut pos, f.width);
                for (b, s) in col.iter_mut().enumerate() {
                    if (v >> b) & 1 == 1 {
                        s.set(i, true);
                    }
                }
            }
            if trailing_dummy && take_bits(row, &mut pos, 1) == 1 {
                dummy.set(i, true);
            }
        }
        Ok(ObliviousTable { schema, columns, dummy })
    }

    /// Inverse of [`ObliviousTable::from_share_file`].
    pub fn to_share_file(&self, share_index: u8, table_id: u32, trailing_dummy: bool) -> ShareFile {
        let width = self.schema.total_width() + trailing_dummy as u32;
        let rb = (width as usize).div_ceil(8);
        let mut payload = vec![0u8; rb * self.len()];
        for i in 0..self.len() {
            let row = &mut payload[i * rb..(i + 1) * rb];
            let mut pos = 0;
            for (f, col) in self.schema.fields.iter().zip(&self.columns) {
                let v = col.iter().enumerate().fold(0u64, |acc, (b, s)| acc | ((s.get(i) as u64) << b));
                put_bits(row, &mut pos, v, f.width);
            }
            if trailing_dummy {
                put_bits(row, &mut pos, self.dummy.get(i) as u64, 1);
            }
        }
        ShareFile {
            version: crate::sharing::SHARE_VERSION,
            share_index,
            table_id,
            row_count: self.len() as u64,
            row_width_bits: width as u16,
            payload,
        }
    }
}

impl ObliviousTable {
    /// Shares of public rows: the first party holds the values, the second zeros.
    pub fn public(schema: Schema, rows: &[(Vec<u64>, bool)], first: bool) -> Result<Self> {
        let n = rows.len();
        let mut columns = Vec::with_capacity(schema.fields.len());
        for (fi, f) in schema.fields.iter().enumerate() {
            columns.push(
                (0..f.width)
                    .map(|b| Lanes::from_fn(n, |i| first && (rows[i].0[fi] >> b) & 1 == 1))
                    .collect(),
            );
        }
        let dummy = Lanes::from_fn(n, |i| first && rows[i].1);
        ObliviousTable::new(schema, columns, dummy)
    }
}
