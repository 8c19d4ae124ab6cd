import logging
import os

import dask

from vlsatools.config import ConfigError, DataConfig
from vlsatools.dataset_path_handler import TripletDataPathHandler
from vlsatools.reader import DatasetFormatError, TripletReader
from vlsatools.triplet_data import Dataset, Vocab

logger = logging.getLogger(__name__)


class DatasetLoader(TripletDataPathHandler, TripletReader):
    """
    Class to load/save a dataset directory (manifest + one file per sample).
    Requires path handler to generate sample filenames.
    """

    def __init__(self, data_path):
        super().__init__(data_path)

    def _run(self, fnc, items, threads):
        if threads > 1:
            tasks = [dask.delayed(fnc)(*item) for item in items]
            return list(dask.compute(*tasks, scheduler="threads", num_workers=threads))
        return [fnc(*item) for item in items]

    def load(self, threads=1) -> Dataset:
        manifest_path = self.build_manifest_path()
        manifest = self.read_manifest(manifest_path)
        try:
            data_config = DataConfig(**manifest["data_config"])
            vocab = Vocab(dict(manifest["vocab"]))
        except (TypeError, ConfigError, ValueError) as err:
            raise DatasetFormatError(
                manifest_path, f"bad manifest content ({err})"
            ) from None
        if len(vocab) > data_config.vocab_size:
            raise DatasetFormatError(
                manifest_path,
                f"vocab of {len(vocab)} ids exceeds "
                f"vocab_size {data_config.vocab_size}",
            )
        entries = manifest["samples"]
        bad = [i for i, e in enumerate(entries) if "id" not in e or "file" not in e]
        if bad:
            raise DatasetFormatError(
                manifest_path, f"sample entries {bad} lack id/file"
            )
        expected = [os.path.join(self.data_directory, e["file"]) for e in entries]
        paths, missing = self.check_for_files(expected)
        if missing:
            raise DatasetFormatError(
                missing[0], "sample file listed in manifest is missing"
            )
        rate = manifest.get("waveform_rate")
        triplets = self._run(
            self.read_sample,
            [(p, e, data_config, rate) for p, e in zip(paths, entries)],
            threads,
        )
        logger.info("loaded %d triplets from %s", len(triplets), self.data_directory)
        return Dataset(triplets, vocab, data_config, dict(manifest.get("metadata", {})))

    def save(self, dataset: Dataset, threads=1):
        os.makedirs(self.data_directory, exist_ok=True)
        paths = self.build_sample_paths([t.id for t in dataset])
        self._run(self.write_sample, list(zip(dataset, paths)), threads)
        document = {
            "version": self.manifest_version,
            "data_config": vars(dataset.data_config),
            "count": len(dataset),
            "vocab": dataset.vocab.token_to_id,
            "metadata": dataset.metadata,
            "samples": [
                {
                    "id": t.id,
                    "file": os.path.basename(p),
                    "latent_class": t.latent_class,
                }
                for t, p in zip(dataset, paths)
            ],
        }
        manifest_path = self.build_manifest_path()
        self.write_manifest(manifest_path, document)
        logger.info("saved %d triplets to %s", len(dataset), self.data_directory)
        return manifest_path


def save_dataset(dataset: Dataset, directory, threads=1):
    """Write ``dataset`` to ``directory``; returns the manifest path."""
    return DatasetLoader(directory).save(dataset, threads=threads)


def load_dataset(directory, threads=1) -> Dataset:
    return DatasetLoader(directory).load(threads=threads)
