"""Optional publication of run outputs to S3.

Enabled by RESULTS_BUCKET_NAME or --s3-bucket. Every helper logs and returns
False on failure; publication never changes the outcome of a run.
"""
import json
import logging
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import boto3
from botocore.exceptions import ClientError

logger = logging.getLogger(__name__)

BUCKET_ENV_VAR = 'RESULTS_BUCKET_NAME'

CONTENT_TYPES = {
    '.csv': 'text/csv',
    '.json': 'application/json',
    '.jsonl': 'application/json',
}


def get_s3_client():
    return boto3.client('s3')


def resolve_bucket(explicit: Optional[str] = None) -> Optional[str]:
    """Bucket from the CLI flag, else from the environment"""
    return explicit or os.environ.get(BUCKET_ENV_VAR) or None


def generate_run_id(command: str, config_hash: str) -> str:
    """Deterministic run id: identical configs publish to the same prefix"""
    return f"run-{command}-{config_hash[:12]}"


def content_type_for(filename: str) -> str:
    _, ext = os.path.splitext(filename)
    return CONTENT_TYPES.get(ext.lower(), 'application/octet-stream')


def publish_run(
    bucket_name: str,
    run_id: str,
    output_dir: str,
    files: List[str],
    manifest: Dict[str, Any],
) -> bool:
    """
    Upload a finished run under results/{run_id}/ and write a completion marker

    Args:
        bucket_name: S3 bucket name
        run_id: run identifier
        output_dir: local directory holding the outputs
        files: output file names relative to output_dir
        manifest: run manifest, stored in the completion marker

    Returns:
        True if successful, False otherwise
    """
    try:
        s3_client = get_s3_client()
        results_prefix = f"results/{run_id}"
        uploaded = {}

        for filename in files:
            key = f"{results_prefix}/{filename}"
            with open(os.path.join(output_dir, filename), 'rb') as handle:
                s3_client.put_object(
                    Bucket=bucket_name,
                    Key=key,
                    Body=handle.read(),
                    ContentType=content_type_for(filename)
                )
            uploaded[filename] = key

        completion_key = f"{results_prefix}/completed.json"
        completion_data = {
            'runId': run_id,
            'status': 'completed',
            'completedAt': datetime.now(timezone.utc).isoformat(),
            'resultsFiles': uploaded,
            'manifest': manifest,
        }
        s3_client.put_object(
            Bucket=bucket_name,
            Key=completion_key,
            Body=json.dumps(completion_data, indent=2),
            ContentType='application/json'
        )

        logger.info(f"Published {len(uploaded)} file(s) to s3://{bucket_name}/{results_prefix}")
        return True

    except ClientError as e:
        logger.error(f"S3 rejected run {run_id} ({_error_code(e)}): {str(e)}")
        return False
    except Exception as e:
        logger.error(f"Failed to publish run {run_id} to S3: {str(e)}")
        return False


def create_error_marker(
    bucket_name: str,
    run_id: str,
    error: Exception,
    command: str,
    exit_code: int,
    input_hash: str,
) -> bool:
    """
    Write errors/{run_id}/error.json for a failed run

    The marker carries what is needed to reproduce the failure: the command,
    the exit code it ended with and the hash of its resolved configuration.

    Returns:
        True if successful, False otherwise
    """
    error_key = f"errors/{run_id}/error.json"
    error_data = {
        'runId': run_id,
        'status': 'failed',
        'command': command,
        'errorType': type(error).__name__,
        'error': str(error),
        'exitCode': exit_code,
        'inputHash': input_hash,
        'failedAt': datetime.now(timezone.utc).isoformat(),
    }
    try:
        get_s3_client().put_object(
            Bucket=bucket_name,
            Key=error_key,
            Body=json.dumps(error_data, indent=2),
            ContentType='application/json'
        )
        logger.info(f"Created error marker for run {run_id} (exit {exit_code})")
        return True
    except ClientError as e:
        logger.error(f"S3 rejected error marker for {run_id} ({_error_code(e)}): {str(e)}")
        return False
    except Exception as e:
        logger.error(f"Failed to create error marker: {str(e)}")
        return False


def _error_code(error: ClientError) -> str:
    return error.response.get('Error', {}).get('Code', 'Unknown')
