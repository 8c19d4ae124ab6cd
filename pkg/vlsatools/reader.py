import json
import logging
import os

import numpy as np

from vlsatools import audio_frontend as af
from vlsatools.triplet_data import Triplet
from vlsatools.tripletfile import TripletFile

logger = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    """
    Corrupt or inconsistent dataset file; ``path`` names the file.
    """

    def __init__(self, path, message):
        self.path = os.fspath(path)
        super().__init__(f"{self.path}: {message}")


class ArrayReader:
    """
    Base class for binary array file reader.
    """

    def __init__(self):
        super().__init__()


class TripletReader(ArrayReader, TripletFile):
    """
    Class to read and write a *single* triplet sample file and the
    dataset manifest.
    """

    def __init__(self):
        super().__init__()

    def encode_record(self, modality: str, array: np.ndarray) -> bytes:
        """
        Serialize one array as header + dims + row-major payload
        """
        dtype = self.dtype_for(modality)
        header = np.zeros(1, dtype=self.header_dtype)
        header["magic"] = self.magic
        header["version"] = self.version
        header["tag"] = self.modality_tags[modality]
        header["rank"] = array.ndim
        header["dtype"] = self.modality_dtypes[modality]
        dims = np.asarray(array.shape, dtype=self.dims_dtype)
        payload = np.ascontiguousarray(array, dtype=dtype)
        return header.tobytes() + dims.tobytes() + payload.tobytes()

    def decode_record(self, buffer: bytes, offset: int, path):
        """
        Parse the record starting at ``offset``

        Parameters
        ----------
        buffer (bytes): whole file content
        offset (int): byte offset of the record header
        path (str): file name, for error messages

        Returns
        -------
        modality (str), array (np.ndarray), next_offset (int)
        """
        if offset + self.header_size > len(buffer):
            raise DatasetFormatError(path, f"truncated record header at byte {offset}")
        header = np.frombuffer(buffer, self.header_dtype, 1, offset)[0]
        if header["magic"] != self.magic:
            raise DatasetFormatError(
                path, f"bad magic {header['magic']!r} at byte {offset}"
            )
        if header["version"] != self.version:
            raise DatasetFormatError(
                path, f"unsupported record version {header['version']}"
            )
        tag, rank, code = int(header["tag"]), int(header["rank"]), int(header["dtype"])
        if tag not in self.tag_modalities:
            raise DatasetFormatError(path, f"unknown modality tag {tag}")
        if code not in self.dtype_codes:
            raise DatasetFormatError(path, f"unknown dtype code {code}")
        offset += self.header_size
        if offset + rank * self.dims_dtype.itemsize > len(buffer):
            raise DatasetFormatError(path, "truncated record dims")
        dims = np.frombuffer(buffer, self.dims_dtype, rank, offset)
        dims = tuple(int(d) for d in dims)
        offset += rank * self.dims_dtype.itemsize
        dtype = self.dtype_codes[code]
        count = int(np.prod(dims, dtype=np.int64))
        if offset + count * dtype.itemsize > len(buffer):
            raise DatasetFormatError(path, f"truncated payload for dims {dims}")
        array = np.frombuffer(buffer, dtype, count, offset).reshape(dims)
        return self.tag_modalities[tag], array, offset + count * dtype.itemsize

    def write_sample(self, triplet, path):
        arrays = {
            "video": triplet.video,
            "text": triplet.tokens,
            "audio": triplet.spectrogram,
        }
        with open(path, "wb") as f:
            for modality in self.modalities:
                f.write(self.encode_record(modality, arrays[modality]))

    def read_records(self, path) -> dict:
        """
        Read every record of a sample file as modality -> array
        """
        with open(path, "rb") as f:
            buffer = f.read()
        records = {}
        offset = 0
        while offset < len(buffer):
            modality, array, offset = self.decode_record(buffer, offset, path)
            records[modality] = array
        return records

    def read_sample(self, path, entry: dict, data_config, waveform_rate=None):
        """
        Create a Triplet from one sample file, checked against the manifest

        Parameters
        ----------
        path (str): sample file path
        entry (dict): manifest entry (id, file, latent_class, optional waveform)
        data_config (DataConfig): configuration recorded in the manifest
        waveform_rate (float): sidecar rate for raw waveform audio

        Returns
        -------
        (Triplet): sample
        """
        records = self.read_records(path)
        if "audio" not in records and entry.get("waveform"):
            wav_path = os.path.join(os.path.dirname(path), entry["waveform"])
            if waveform_rate is None:
                raise DatasetFormatError(path, "waveform audio without a waveform_rate")
            spec = af.waveform_to_spectrogram(
                af.read_waveform(wav_path, waveform_rate),
                n_frames=data_config.n_time,
                n_bins=data_config.n_freq,
            )
            records["audio"] = spec.values.astype(np.float32)
        expected = self.expected_shapes(data_config)
        for modality, shape in expected.items():
            if modality not in records:
                raise DatasetFormatError(path, f"missing {modality} record")
            if records[modality].shape != tuple(shape):
                raise DatasetFormatError(
                    path,
                    f"{modality} shape {records[modality].shape} does not match "
                    f"manifest {tuple(shape)}",
                )
        return Triplet(
            id=entry["id"],
            video=records["video"],
            tokens=records["text"],
            spectrogram=records["audio"],
            latent_class=entry.get("latent_class"),
        )

    def write_manifest(self, path, document: dict):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write("\n")

    def read_manifest(self, path) -> dict:
        """
        Load and sanity-check manifest.json
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except FileNotFoundError:
            raise DatasetFormatError(path, "manifest not found") from None
        except json.JSONDecodeError as err:
            raise DatasetFormatError(
                path, f"manifest is not valid JSON ({err})"
            ) from None
        required = ("version", "data_config", "count", "vocab", "samples")
        missing = [k for k in required if k not in document]
        if missing:
            raise DatasetFormatError(path, f"manifest lacks {missing}")
        if document["version"] != self.manifest_version:
            raise DatasetFormatError(
                path, f"unsupported manifest version {document['version']}"
            )
        if document["count"] != len(document["samples"]):
            raise DatasetFormatError(
                path,
                f"count {document['count']} != "
                f"{len(document['samples'])} sample entries",
            )
        return document
